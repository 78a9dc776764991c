#include "kpforge/decode.hpp"

#include <algorithm>

namespace kpforge {

void DecodeConfig::validate() const {
    if (!(confidence_threshold >= 0.0 && confidence_threshold <= 1.0))
        throw ConfigError("decode: confidence_threshold must be in [0, 1]");
    if (max_peaks_per_group < 0)
        throw ConfigError("decode: max_peaks_per_group must be >= 1 (or 0 for group size)");
    if (!(output_scale > 0.0)) throw ConfigError("decode: output_scale must be positive");
}

namespace {

struct Peak {
    float value;
    int y, x;
};

bool strict_local_max(const float* plane, int width, int height, int y, int x) {
    const float v = plane[static_cast<std::size_t>(y) * width + x];
    for (int dy = -1; dy <= 1; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
            if (dy == 0 && dx == 0) continue;
            const int ny = y + dy;
            const int nx = x + dx;
            if (ny < 0 || ny >= height || nx < 0 || nx >= width) continue;
            if (plane[static_cast<std::size_t>(ny) * width + nx] >= v) return false;
        }
    }
    return true;
}

}  // namespace

std::vector<Detection> decode_heatmaps(const HeatmapStack& stack, const KeypointSchema& schema,
                                       const DecodeConfig& config) {
    config.validate();
    if (stack.channel_names != schema.channel_names())
        throw SchemaError("decode: stack channels do not match the schema layout");
    if (stack.width <= 0 || stack.height <= 0 ||
        stack.values.size() != static_cast<std::size_t>(stack.channels()) * stack.width * stack.height)
        throw ValidationError("decode: malformed heatmap stack");

    std::vector<Detection> detections;
    for (int c = 0; c < stack.channels(); ++c) {
        const auto members = schema.channel_members(c);
        const bool grouped = members.size() > 1 || schema.is_grouped(members.front());
        const float* plane = stack.plane(c);
        const auto threshold = static_cast<float>(config.confidence_threshold);

        if (!grouped) {
            // Global argmax, first occurrence in row-major order on ties.
            int best_y = 0, best_x = 0;
            float best = plane[0];
            for (int y = 0; y < stack.height; ++y) {
                const float* row = plane + static_cast<std::size_t>(y) * stack.width;
                for (int x = 0; x < stack.width; ++x) {
                    if (row[x] > best) {
                        best = row[x];
                        best_y = y;
                        best_x = x;
                    }
                }
            }
            if (best >= threshold) {
                detections.push_back({stack.channel_names[c], best_x * config.output_scale,
                                      best_y * config.output_scale, best});
            }
            continue;
        }

        std::vector<Peak> peaks;
        for (int y = 0; y < stack.height; ++y) {
            for (int x = 0; x < stack.width; ++x) {
                const float v = plane[static_cast<std::size_t>(y) * stack.width + x];
                if (v < threshold) continue;
                if (strict_local_max(plane, stack.width, stack.height, y, x))
                    peaks.push_back({v, y, x});
            }
        }
        // Confidence descending; the row-major scan order above makes
        // std::stable_sort break ties row-major.
        std::stable_sort(peaks.begin(), peaks.end(),
                         [](const Peak& a, const Peak& b) { return a.value > b.value; });
        std::size_t keep = config.max_peaks_per_group > 0
                               ? static_cast<std::size_t>(config.max_peaks_per_group)
                               : members.size();
        if (peaks.size() > keep) peaks.resize(keep);
        for (const auto& p : peaks) {
            detections.push_back({stack.channel_names[c], p.x * config.output_scale,
                                  p.y * config.output_scale, p.value});
        }
    }
    return detections;
}

}  // namespace kpforge
