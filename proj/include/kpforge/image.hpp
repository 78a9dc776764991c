#pragma once

#include <filesystem>

#include <opencv2/core.hpp>

#include "kpforge/errors.hpp"

namespace kpforge {

/// Images flow through the toolkit as CV_32FC3 RGB in [0, 255]; soft masks
/// as CV_32FC1 in [0, 1].

struct RgbaImage {
    cv::Mat rgb;    // CV_32FC3
    cv::Mat alpha;  // CV_32FC1 in [0, 1]
};

cv::Mat load_image_rgb(const std::filesystem::path& path);

/// Requires an alpha channel in the file.
RgbaImage load_image_rgba(const std::filesystem::path& path);

/// Clamps to [0, 255], converts to 8-bit and writes a PNG. Accepts CV_32FC3
/// (RGB) or CV_32FC1.
void save_image_png(const cv::Mat& image, const std::filesystem::path& path);

}  // namespace kpforge
