#pragma once

#include <cstdint>
#include <filesystem>
#include <limits>
#include <string>
#include <vector>

#include <torch/torch.h>
#include <opencv2/core.hpp>

#include "kpforge/dataset.hpp"
#include "kpforge/model.hpp"

namespace kpforge {

struct ValueRange {
    double lo = 0.0;
    double hi = 0.0;
};

/// Label-consistent augmentation. Geometric ops transport keypoints and the
/// bbox through the same map; photometric ops leave the labels untouched.
struct AugmentationConfig {
    bool affine_enabled = true;
    ValueRange rotation_deg{-25.0, 25.0};
    ValueRange translation_frac{-0.10, 0.10};  // of image size
    ValueRange scale{0.8, 1.2};
    ValueRange shear_deg{-8.0, 8.0};

    bool perspective_enabled = true;
    double perspective_jitter_frac = 0.05;  // corner jitter, of image size

    bool blur_enabled = true;
    ValueRange blur_radius_px{0.0, 2.0};

    bool add_enabled = true;
    ValueRange add_value{-20.0, 20.0};

    bool multiply_enabled = true;
    ValueRange multiply{0.8, 1.2};

    bool noise_enabled = true;
    ValueRange noise_sigma{0.0, 8.0};

    void validate() const;
    static AugmentationConfig disabled();
};

struct TrainConfig {
    double learning_rate = 1.5e-5;
    int batch_size = 16;
    int max_epochs = 200;
    int early_stop_patience = 20;  // epochs without validation improvement
    int plateau_patience = 10;     // epochs without improvement before lr * plateau_factor
    double plateau_factor = 0.1;
    double improvement_threshold = 1e-7;  // absolute decrease that counts
    AugmentationConfig augmentation;
    std::uint64_t seed = 0;

    void validate() const;
    std::string to_json_text() const;
    static TrainConfig from_json_text(const std::string& text);
    static TrainConfig load(const std::filesystem::path& path);
};

struct EpochLog {
    int epoch = 0;
    double train_loss = 0.0;
    double val_loss = 0.0;
    double learning_rate = 0.0;
};

struct TrainState {
    int epochs_run = 0;
    double best_val_loss = std::numeric_limits<double>::infinity();
    int best_epoch = 0;
    std::filesystem::path best_checkpoint;
    std::vector<EpochLog> log;
};

/// Sum over supervision levels of the mean squared error between prediction
/// and target. Zero iff the pyramids are equal.
torch::Tensor multiscale_loss(const std::vector<torch::Tensor>& predictions,
                              const std::vector<torch::Tensor>& targets);

/// Applies the configured augmentations to an image (CV_32FC3 RGB [0,255])
/// and its annotation. Deterministic per seed. Keypoints pushed off-frame
/// flip to visible=false; a transform losing every keypoint is resampled
/// internally (up to a retry cap).
std::pair<cv::Mat, SampleAnnotation> augment(const cv::Mat& image,
                                             const SampleAnnotation& annotation,
                                             const AugmentationConfig& config,
                                             std::uint64_t seed);

/// Adam over the trainable parameters, per-epoch validation (augmentation
/// off), plateau lr decay, early stopping, best-checkpoint tracking. Writes
/// the best checkpoint plus training_log.csv under out_dir.
TrainState train(HeatmapNet& model, const DatasetManifest& train_set,
                 const DatasetManifest& val_set, const TrainConfig& config,
                 const std::filesystem::path& out_dir);

}  // namespace kpforge
