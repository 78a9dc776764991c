#pragma once

#include <string>
#include <vector>

#include "kpforge/dataset.hpp"

namespace kpforge {

/// Dense per-channel probability maps in [0, 1]. One plane per schema
/// channel, row-major within a plane.
struct HeatmapStack {
    int width = 0;
    int height = 0;
    std::vector<std::string> channel_names;
    std::vector<float> values;  // [channel][y][x]

    int channels() const { return static_cast<int>(channel_names.size()); }

    float at(int c, int y, int x) const {
        return values[(static_cast<std::size_t>(c) * height + y) * width + x];
    }
    float& at(int c, int y, int x) {
        return values[(static_cast<std::size_t>(c) * height + y) * width + x];
    }
    const float* plane(int c) const {
        return values.data() + static_cast<std::size_t>(c) * height * width;
    }
    float* plane(int c) {
        return values.data() + static_cast<std::size_t>(c) * height * width;
    }
};

/// Target stacks for every supervision level, smallest first. Each level
/// doubles the previous one's width and height.
struct HeatmapPyramid {
    std::vector<HeatmapStack> levels;

    std::size_t size() const { return levels.size(); }
    const HeatmapStack& level(std::size_t i) const { return levels[i]; }
    const HeatmapStack& finest() const { return levels.back(); }
};

/// Renders ground-truth Gaussian targets at one resolution. Annotation
/// coordinates must already be expressed in target pixels (callers rescale
/// by size / image size). A kernel with sigma = size/64 is centered at each
/// keypoint's continuous location; the value at the rounded keypoint pixel is
/// pinned to exactly 1.0. Merge-group channels are the per-keypoint sum
/// clamped to 1.0; channels with no annotated keypoint stay all zero.
HeatmapStack render_targets(const SampleAnnotation& annotation, const KeypointSchema& schema,
                            int size);

/// Renders each supervision level independently at its own resolution
/// (sigma_k = size_k/64, keypoints scaled by size_k / image size), so the
/// 1.0 peak survives at every level. level_sizes must be strictly doubling.
HeatmapPyramid render_pyramid(const SampleAnnotation& annotation, const KeypointSchema& schema,
                              const std::vector<int>& level_sizes);

}  // namespace kpforge
