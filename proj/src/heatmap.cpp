#include "kpforge/heatmap.hpp"

#include <algorithm>
#include <cmath>

namespace kpforge {

namespace {

struct PlacedKeypoint {
    std::string name;
    double x, y;
};

}  // namespace

HeatmapStack render_targets(const SampleAnnotation& annotation, const KeypointSchema& schema,
                            int size) {
    if (size < 1) throw ConfigError("render_targets: size must be >= 1");
    const auto channels = schema.channel_names();
    HeatmapStack stack;
    stack.width = size;
    stack.height = size;
    stack.channel_names = channels;
    stack.values.assign(static_cast<std::size_t>(channels.size()) * size * size, 0.0f);

    const double sigma = size / 64.0;
    const double inv_two_sigma_sq = 1.0 / (2.0 * sigma * sigma);

    std::vector<double> plane(static_cast<std::size_t>(size) * size);
    for (int c = 0; c < stack.channels(); ++c) {
        auto members = schema.channel_members(c);
        // Canonical accumulation order: permuting keypoints inside a merge
        // group must leave the channel bitwise unchanged.
        std::sort(members.begin(), members.end());

        std::vector<PlacedKeypoint> placed;
        for (const auto& member : members) {
            if (const Keypoint* kp = annotation.find(member)) {
                placed.push_back({member, kp->x, kp->y});
            }
        }
        if (placed.empty()) continue;  // fully absent -> all zeros

        std::fill(plane.begin(), plane.end(), 0.0);
        for (const auto& kp : placed) {
            double* row = plane.data();
            for (int y = 0; y < size; ++y) {
                const double dy = y - kp.y;
                const double dy_sq = dy * dy;
                for (int x = 0; x < size; ++x, ++row) {
                    const double dx = x - kp.x;
                    *row += std::exp(-(dx * dx + dy_sq) * inv_two_sigma_sq);
                }
            }
        }

        float* out = stack.plane(c);
        const std::size_t n = plane.size();
        for (std::size_t i = 0; i < n; ++i) {
            out[i] = static_cast<float>(std::min(plane[i], 1.0));
        }
        // Exact 1.0 at each on-canvas keypoint's rounded pixel (clamped so a
        // coordinate just under the edge still pins inside the grid);
        // off-canvas keypoints contribute their tail only.
        for (const auto& kp : placed) {
            if (kp.x < 0.0 || kp.x >= size || kp.y < 0.0 || kp.y >= size) continue;
            const auto px = std::min<long>(std::lround(kp.x), size - 1);
            const auto py = std::min<long>(std::lround(kp.y), size - 1);
            out[static_cast<std::size_t>(py) * size + px] = 1.0f;
        }
    }
    return stack;
}

HeatmapPyramid render_pyramid(const SampleAnnotation& annotation, const KeypointSchema& schema,
                              const std::vector<int>& level_sizes) {
    if (level_sizes.empty()) throw ConfigError("render_pyramid: empty level size list");
    for (std::size_t i = 0; i + 1 < level_sizes.size(); ++i) {
        if (level_sizes[i + 1] != 2 * level_sizes[i])
            throw ConfigError("render_pyramid: level sizes must double (got " +
                              std::to_string(level_sizes[i]) + " -> " +
                              std::to_string(level_sizes[i + 1]) + ")");
    }
    if (annotation.width <= 0 || annotation.height <= 0)
        throw ValidationError("render_pyramid: annotation has no image size");

    HeatmapPyramid pyramid;
    pyramid.levels.reserve(level_sizes.size());
    for (int size : level_sizes) {
        SampleAnnotation scaled = annotation;
        const double sx = static_cast<double>(size) / annotation.width;
        const double sy = static_cast<double>(size) / annotation.height;
        for (auto& kp : scaled.keypoints) {
            kp.x *= sx;
            kp.y *= sy;
        }
        pyramid.levels.push_back(render_targets(scaled, schema, size));
    }
    return pyramid;
}

}  // namespace kpforge
