#pragma once

#include <vector>

#include "kpforge/heatmap.hpp"

namespace kpforge {

/// One decoded keypoint (or merge-group peak). Coordinates are heatmap
/// pixels multiplied by DecodeConfig::output_scale; confidence is the raw
/// heatmap value at the peak.
struct Detection {
    std::string name;
    double x = 0.0;
    double y = 0.0;
    double confidence = 0.0;
};

struct DecodeConfig {
    double confidence_threshold = 0.5;
    /// Peaks kept per merge-group channel; 0 means the group size.
    /// Local maxima use a strict 3x3 neighborhood test.
    int max_peaks_per_group = 0;
    /// Maps heatmap pixels to input-image pixels.
    double output_scale = 1.0;

    void validate() const;
};

/// Ungrouped channels yield the global argmax when its value passes the
/// threshold; merge-group channels yield every strict 3x3 local maximum
/// passing the threshold, sorted by confidence (row-major order breaking
/// ties), truncated to max_peaks_per_group.
std::vector<Detection> decode_heatmaps(const HeatmapStack& stack, const KeypointSchema& schema,
                                       const DecodeConfig& config);

}  // namespace kpforge
