#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "kpforge/evaluation.hpp"
#include "kpforge/inference.hpp"
#include "kpforge/training.hpp"

namespace kpforge {

/// "start:stop:step" (inclusive stop) or a comma-separated list.
std::vector<double> parse_alpha_grid(const std::string& text);

struct EvalOptions {
    std::filesystem::path checkpoint;
    std::filesystem::path manifest;
    std::vector<double> alpha_grid;  // empty -> 0.02:0.2:0.02
    double reference_alpha = 0.1;
    /// 0 scores the plain argmax; raise it to require confident detections.
    double confidence_threshold = 0.0;
    int level_size = 0;  // 0 = finest head
    bool with_timing = false;
    std::string model_id;  // empty -> checkpoint directory name
};

/// Runs detection over every manifest image and assembles the PCK report.
EvalReport run_eval(const EvalOptions& options);

struct TrainRunOptions {
    std::filesystem::path manifest;
    std::filesystem::path schema;
    std::filesystem::path config;  // empty -> defaults
    std::filesystem::path out_dir;
    std::string variant = "ihm224";
    int input_size = 224;
    double val_fraction = 0.1;
    std::uint64_t seed = 0;
    std::optional<std::filesystem::path> backbone_weights;
    bool allow_random_backbone = false;
};

TrainState run_training(const TrainRunOptions& options);

struct BenchOptions {
    std::filesystem::path checkpoint;
    std::filesystem::path manifest;
    int warmup = 10;
    int min_samples = 100;
    double confidence_threshold = 0.5;
};

LatencyReport run_bench(const BenchOptions& options);

}  // namespace kpforge
