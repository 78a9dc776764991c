#pragma once

#include <atomic>
#include <filesystem>
#include <fstream>
#include <unistd.h>
#include <string>
#include <vector>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "kpforge/compositor.hpp"
#include "kpforge/dataset.hpp"
#include "kpforge/decode.hpp"
#include "kpforge/heatmap.hpp"
#include "kpforge/rng.hpp"

namespace kpforge::testing {

inline KeypointSchema make_schema(std::vector<std::string> names,
                                  std::vector<std::vector<std::string>> groups = {},
                                  std::string tool = "wrench") {
    KeypointSchema schema;
    schema.tool_name = std::move(tool);
    schema.keypoint_names = std::move(names);
    schema.merge_groups = std::move(groups);
    schema.validate();
    return schema;
}

inline SampleAnnotation make_annotation(int width, int height,
                                        std::vector<Keypoint> keypoints,
                                        std::string tool = "wrench") {
    SampleAnnotation a;
    a.image_path = "img.png";
    a.width = width;
    a.height = height;
    a.bbox = {0.0, 0.0, static_cast<double>(width), static_cast<double>(height)};
    a.keypoints = std::move(keypoints);
    a.tool_name = std::move(tool);
    a.source = SampleSource::kComposite2d;
    return a;
}

/// Scratch directory under the system temp root, removed on destruction.
class TempDir {
 public:
    explicit TempDir(const std::string& tag) {
        static std::atomic<unsigned> counter{0};
        path_ = std::filesystem::temp_directory_path() /
                ("kpforge_" + tag + "_" + std::to_string(::getpid()) + "_" +
                 std::to_string(counter++));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    const std::filesystem::path& path() const { return path_; }

 private:
    std::filesystem::path path_;
};

// ---------------------------------------------------------------------------
// Independent oracles (kept free of the implementation paths they check)

/// Every pixel strictly greater than all in-bounds 8-neighbors.
inline std::vector<std::pair<int, int>> scan_local_maxima(const HeatmapStack& stack, int channel,
                                                          float threshold) {
    std::vector<std::pair<int, int>> maxima;  // (y, x)
    for (int y = 0; y < stack.height; ++y) {
        for (int x = 0; x < stack.width; ++x) {
            const float v = stack.at(channel, y, x);
            if (v < threshold) continue;
            bool is_max = true;
            for (int dy = -1; dy <= 1 && is_max; ++dy) {
                for (int dx = -1; dx <= 1; ++dx) {
                    if (dy == 0 && dx == 0) continue;
                    const int ny = y + dy, nx = x + dx;
                    if (ny < 0 || ny >= stack.height || nx < 0 || nx >= stack.width) continue;
                    if (stack.at(channel, ny, nx) >= v) {
                        is_max = false;
                        break;
                    }
                }
            }
            if (is_max) maxima.emplace_back(y, x);
        }
    }
    return maxima;
}

/// Exhaustive-scan decoder written straight from the decoding rules.
inline std::vector<Detection> oracle_decode(const HeatmapStack& stack,
                                            const KeypointSchema& schema,
                                            const DecodeConfig& config) {
    std::vector<Detection> result;
    const auto channel_names = schema.channel_names();
    for (int c = 0; c < static_cast<int>(channel_names.size()); ++c) {
        const auto members = schema.channel_members(c);
        const bool grouped = schema.is_grouped(members.front());
        const auto threshold = static_cast<float>(config.confidence_threshold);
        if (!grouped) {
            float best = -1.0f;
            int by = 0, bx = 0;
            for (int y = 0; y < stack.height; ++y) {
                for (int x = 0; x < stack.width; ++x) {
                    if (stack.at(c, y, x) > best) {
                        best = stack.at(c, y, x);
                        by = y;
                        bx = x;
                    }
                }
            }
            if (best >= threshold)
                result.push_back({channel_names[c], bx * config.output_scale,
                                  by * config.output_scale, best});
            continue;
        }
        auto maxima = scan_local_maxima(stack, c, threshold);
        std::stable_sort(maxima.begin(), maxima.end(),
                         [&](const auto& a, const auto& b) {
                             return stack.at(c, a.first, a.second) >
                                    stack.at(c, b.first, b.second);
                         });
        std::size_t keep = config.max_peaks_per_group > 0
                               ? static_cast<std::size_t>(config.max_peaks_per_group)
                               : members.size();
        if (maxima.size() > keep) maxima.resize(keep);
        for (const auto& [y, x] : maxima) {
            result.push_back({channel_names[c], x * config.output_scale, y * config.output_scale,
                              stack.at(c, y, x)});
        }
    }
    return result;
}

// ---------------------------------------------------------------------------
// Synthetic tool assets (procedurally drawn, deterministic per variant)

/// Screwdriver-like cutout: shaft + handle + tip, two keypoints ("tip",
/// "butt"). The variant index changes proportions and colors so multi-asset
/// datasets carry real appearance variation.
inline ForegroundAsset draw_tool_asset(int variant, int size = 160) {
    ForegroundAsset asset;
    asset.tool_name = "screwdriver";
    asset.rgb = cv::Mat(size, size, CV_32FC3, cv::Scalar(0, 0, 0));
    asset.alpha = cv::Mat(size, size, CV_32FC1, cv::Scalar(0.0f));

    Rng rng(1234 + static_cast<std::uint64_t>(variant));
    const double cy = size / 2.0;
    const double length = size * rng.uniform(0.62, 0.82);
    const double x0 = (size - length) / 2.0;
    const double x1 = x0 + length;
    const int shaft_w = static_cast<int>(rng.uniform(4.0, 7.0));
    const int handle_w = static_cast<int>(rng.uniform(12.0, 18.0));
    const double handle_len = length * rng.uniform(0.32, 0.42);

    const cv::Scalar handle_color(rng.uniform(120, 240), rng.uniform(30, 120),
                                  rng.uniform(30, 120));
    const cv::Scalar shaft_color(rng.uniform(150, 220), rng.uniform(150, 220),
                                 rng.uniform(150, 220));

    auto draw = [&](cv::Mat& rgb, cv::Mat& alpha, const cv::Point2d& a, const cv::Point2d& b,
                    int width, const cv::Scalar& color) {
        cv::line(rgb, a, b, color, width, cv::LINE_8);
        cv::line(alpha, a, b, cv::Scalar(1.0), width, cv::LINE_8);
    };
    draw(asset.rgb, asset.alpha, {x0 + handle_len, cy}, {x1, cy}, shaft_w, shaft_color);
    draw(asset.rgb, asset.alpha, {x0, cy}, {x0 + handle_len, cy}, handle_w, handle_color);
    cv::circle(asset.rgb, cv::Point2d(x1, cy), shaft_w + 2,
               cv::Scalar(240, 210, rng.uniform(30, 90)), cv::FILLED);
    cv::circle(asset.alpha, cv::Point2d(x1, cy), shaft_w + 2, cv::Scalar(1.0), cv::FILLED);

    asset.keypoints = {{"tip", x1, cy, true}, {"butt", x0, cy, true}};
    asset.validate();
    return asset;
}

/// Writes an asset as RGBA PNG + keypoint sidecar JSON (the generate input
/// format).
inline void write_asset_png(const ForegroundAsset& asset, const std::filesystem::path& png_path) {
    cv::Mat rgb8, alpha8, bgr8;
    asset.rgb.convertTo(rgb8, CV_8UC3);
    cv::Mat alpha_scaled = asset.alpha * 255.0f;
    alpha_scaled.convertTo(alpha8, CV_8UC1);
    cv::cvtColor(rgb8, bgr8, cv::COLOR_RGB2BGR);
    std::vector<cv::Mat> planes(3);
    cv::split(bgr8, planes);
    cv::Mat bgra;
    cv::merge(std::vector<cv::Mat>{planes[0], planes[1], planes[2], alpha8}, bgra);
    cv::imwrite(png_path.string(), bgra);

    std::filesystem::path sidecar = png_path;
    sidecar.replace_extension(".json");
    std::ofstream out(sidecar);
    out << R"({"tool":")" << asset.tool_name << R"(","keypoints":[)";
    for (std::size_t i = 0; i < asset.keypoints.size(); ++i) {
        const auto& kp = asset.keypoints[i];
        out << (i > 0 ? "," : "") << R"({"name":")" << kp.name << R"(","x":)" << kp.x
            << R"(,"y":)" << kp.y << "}";
    }
    out << "]}";
}

inline void write_background_image(const cv::Mat& rgb, const std::filesystem::path& path) {
    cv::Mat u8, bgr;
    rgb.convertTo(u8, CV_8UC3);
    cv::cvtColor(u8, bgr, cv::COLOR_RGB2BGR);
    cv::imwrite(path.string(), bgr);
}

/// Smoothly varying background so composites are not trivially separable.
inline cv::Mat draw_background(int variant, int size = 224) {
    cv::Mat bg(size, size, CV_32FC3);
    Rng rng(777 + static_cast<std::uint64_t>(variant));
    const double fx = rng.uniform(0.5, 3.0), fy = rng.uniform(0.5, 3.0);
    const double r0 = rng.uniform(40, 200), g0 = rng.uniform(40, 200), b0 = rng.uniform(40, 200);
    for (int y = 0; y < size; ++y) {
        float* row = bg.ptr<float>(y);
        for (int x = 0; x < size; ++x) {
            const double s = std::sin(fx * x * M_PI / size) * std::cos(fy * y * M_PI / size);
            row[x * 3 + 0] = static_cast<float>(std::clamp(r0 + 50 * s, 0.0, 255.0));
            row[x * 3 + 1] = static_cast<float>(std::clamp(g0 - 35 * s, 0.0, 255.0));
            row[x * 3 + 2] = static_cast<float>(std::clamp(b0 + 20 * s, 0.0, 255.0));
        }
    }
    return bg;
}

}  // namespace kpforge::testing
