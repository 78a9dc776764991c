#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include <opencv2/core.hpp>

#include "kpforge/dataset.hpp"
#include "kpforge/rng.hpp"

namespace kpforge {

/// Foreground cutout: color image with a transparency mask plus labeled
/// keypoints in asset coordinates.
struct ForegroundAsset {
    cv::Mat rgb;    // CV_32FC3 [0, 255]
    cv::Mat alpha;  // CV_32FC1 [0, 1]
    std::vector<Keypoint> keypoints;
    std::string tool_name;

    /// Bounding box of alpha >= 0.5.
    cv::Rect mask_bbox() const;
    void validate() const;

    /// PNG with alpha channel plus a sidecar JSON ("<stem>.json") holding
    /// tool name and keypoints. Distractor assets may omit the sidecar.
    static ForegroundAsset load(const std::filesystem::path& png_path);
};

enum class BlendMode { kAlpha, kPoisson, kLaplacian };
std::string to_string(BlendMode mode);
BlendMode blend_mode_from_string(const std::string& text);

/// Randomized pose + blending choice for one composite. Fully determines
/// the output together with the asset and background.
struct CompositeSpec {
    double rotation_deg = 0.0;
    double scale = 1.0;  // asset -> canvas ratio, about the canvas center
    double tx = 0.0;
    double ty = 0.0;
    BlendMode blend_mode = BlendMode::kAlpha;
    std::uint64_t seed = 0;

    void validate() const;
};

/// 2x3 affine map from asset coordinates to canvas coordinates:
/// p' = R(rotation) * scale * (p - center) + center + t.
struct AffineMap {
    // row-major [a b tx; c d ty]
    std::array<double, 6> m{1, 0, 0, 0, 1, 0};

    cv::Point2d apply(const cv::Point2d& p) const {
        return {m[0] * p.x + m[1] * p.y + m[2], m[3] * p.x + m[4] * p.y + m[5]};
    }
    double det() const { return m[0] * m[4] - m[1] * m[3]; }
    AffineMap inverse() const;
    cv::Mat to_cv() const;  // 2x3 CV_64F
    void validate() const;

    static AffineMap from_spec(const CompositeSpec& spec, const cv::Size& canvas);
};

struct ComposedSample {
    cv::Mat image;            // CV_32FC3
    cv::Mat foreground_mask;  // CV_32FC1, warped asset alpha (kept for background swaps)
    SampleAnnotation annotation;
};

/// Warps the asset by the spec's affine map, blends it onto the background
/// with the requested mode, and transports the keypoint labels through the
/// same map. Returns nullopt when every keypoint lands off-canvas (caller
/// resamples the spec).
std::optional<ComposedSample> compose_sample(const ForegroundAsset& asset,
                                             const cv::Mat& background,
                                             const CompositeSpec& spec);

/// Occlusion/variation copy: with equal (seeded) probability either pastes a
/// random distractor in front (keypoints it covers flip to visible=false) or
/// swaps the background behind the stored foreground mask. Keypoint
/// coordinates never change.
ComposedSample augment_with_distractors(const ComposedSample& sample,
                                        const std::vector<ForegroundAsset>& distractor_pool,
                                        const std::vector<cv::Mat>& background_pool,
                                        std::uint64_t seed);

/// Uniform pose sampler: rotation in [0, 360), long side in
/// [0.3, 1.0] * canvas width, translation placing a random keypoint
/// uniformly on the canvas, blend mode uniform over the three modes.
CompositeSpec sample_spec(const ForegroundAsset& asset, const cv::Size& canvas, Rng& rng);

struct GenerateOptions {
    std::filesystem::path assets_dir;
    std::filesystem::path backgrounds_dir;
    std::filesystem::path distractors_dir;  // empty -> no occlusion variants
    std::filesystem::path out_dir;
    std::filesystem::path schema_path;  // empty -> derive from the assets
    int count = 0;
    std::uint64_t seed = 0;
    int canvas = 224;
};

/// Cut-and-paste dataset driver: writes `count` composites (plus `count`
/// occlusion/background-swap variants when distractors are given), a
/// manifest.jsonl and a schema.json under out_dir. Returns the manifest.
DatasetManifest generate_dataset(const GenerateOptions& options);

}  // namespace kpforge
