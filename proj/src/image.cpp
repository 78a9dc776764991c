#include "kpforge/image.hpp"

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

namespace kpforge {

cv::Mat load_image_rgb(const std::filesystem::path& path) {
    cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
    if (bgr.empty()) throw IoError("cannot read image: " + path.string());
    cv::Mat rgb;
    cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
    rgb.convertTo(rgb, CV_32FC3);
    return rgb;
}

RgbaImage load_image_rgba(const std::filesystem::path& path) {
    cv::Mat raw = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
    if (raw.empty()) throw IoError("cannot read image: " + path.string());
    if (raw.channels() != 4)
        throw IoError("image has no alpha channel: " + path.string());
    cv::Mat rgba;
    cv::cvtColor(raw, rgba, cv::COLOR_BGRA2RGBA);
    rgba.convertTo(rgba, CV_32FC4);
    RgbaImage out;
    std::vector<cv::Mat> planes(4);
    cv::split(rgba, planes);
    cv::merge(std::vector<cv::Mat>{planes[0], planes[1], planes[2]}, out.rgb);
    out.alpha = planes[3] / 255.0f;
    return out;
}

void save_image_png(const cv::Mat& image, const std::filesystem::path& path) {
    if (image.empty()) throw IoError("refusing to write empty image: " + path.string());
    cv::Mat clamped;
    cv::max(image, 0.0, clamped);
    cv::min(clamped, 255.0, clamped);
    cv::Mat u8;
    clamped.convertTo(u8, CV_8U);
    if (u8.channels() == 3) cv::cvtColor(u8, u8, cv::COLOR_RGB2BGR);
    if (!cv::imwrite(path.string(), u8))
        throw IoError("cannot write image: " + path.string());
}

}  // namespace kpforge
