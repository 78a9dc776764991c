#pragma once

#include <functional>
#include <vector>

#include <opencv2/core.hpp>

#include "kpforge/decode.hpp"
#include "kpforge/model.hpp"

namespace kpforge {

/// Forward pass in eval mode, returning the chosen head's prediction as a
/// stack. `level_size` selects a head by its spatial size (0 = finest).
HeatmapStack predict_stack(HeatmapNet& model, const cv::Mat& image_rgb,
                           const KeypointSchema& schema, int level_size = 0);

/// Forward pass in eval mode + decode of the chosen head. Detections come
/// back in input-image pixels (output_scale = input_size / head size).
std::vector<Detection> detect(HeatmapNet& model, const cv::Mat& image_rgb,
                              const KeypointSchema& schema, const DecodeConfig& config,
                              int level_size = 0);

struct LatencyReport {
    long samples = 0;
    double mean_s = 0.0;
    double median_s = 0.0;
    double p95_s = 0.0;

    std::string to_json_text() const;
};

/// Wall-clock timing of forward + decode per image, warm-up iterations
/// excluded. The image list is cycled until at least `min_samples` timed
/// runs are collected.
LatencyReport benchmark_latency(HeatmapNet& model, const std::vector<cv::Mat>& images,
                                const KeypointSchema& schema, const DecodeConfig& config,
                                int warmup = 10, int min_samples = 100);

}  // namespace kpforge
