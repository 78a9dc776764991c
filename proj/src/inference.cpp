#include "kpforge/inference.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include <json.hpp>
#include <opencv2/imgproc.hpp>

namespace kpforge {

namespace {

cv::Mat fit_to_input(const cv::Mat& image, int input_size) {
    if (image.empty() || image.type() != CV_32FC3)
        throw ValidationError("detect: image must be CV_32FC3 RGB");
    if (image.cols == input_size && image.rows == input_size) return image;
    cv::Mat resized;
    cv::resize(image, resized, {input_size, input_size}, 0, 0, cv::INTER_LINEAR);
    return resized;
}

std::size_t pick_head(const std::vector<int>& sizes, int level_size) {
    if (level_size == 0) return sizes.size() - 1;  // finest
    for (std::size_t i = 0; i < sizes.size(); ++i) {
        if (sizes[i] == level_size) return i;
    }
    std::string available;
    for (int s : sizes) available += (available.empty() ? "" : ",") + std::to_string(s);
    throw ConfigError("detect: no head of size " + std::to_string(level_size) +
                      " (available: " + available + ")");
}

}  // namespace

HeatmapStack predict_stack(HeatmapNet& model, const cv::Mat& image_rgb,
                           const KeypointSchema& schema, int level_size) {
    const auto sizes = model->config().head_sizes();
    const std::size_t head = pick_head(sizes, level_size);

    torch::NoGradGuard no_grad;
    model->eval();
    const cv::Mat input = fit_to_input(image_rgb, model->config().input_size);
    const auto outputs = model->forward(to_input_tensor(input));
    return to_heatmap_stack(outputs[head], schema);
}

std::vector<Detection> detect(HeatmapNet& model, const cv::Mat& image_rgb,
                              const KeypointSchema& schema, const DecodeConfig& config,
                              int level_size) {
    const HeatmapStack stack = predict_stack(model, image_rgb, schema, level_size);
    DecodeConfig scaled = config;
    scaled.output_scale = static_cast<double>(model->config().input_size) / stack.width;
    return decode_heatmaps(stack, schema, scaled);
}

LatencyReport benchmark_latency(HeatmapNet& model, const std::vector<cv::Mat>& images,
                                const KeypointSchema& schema, const DecodeConfig& config,
                                int warmup, int min_samples) {
    if (images.empty()) throw ValidationError("benchmark: no images");
    if (warmup < 0 || min_samples < 1) throw ConfigError("benchmark: bad warmup/sample counts");

    auto run_once = [&](const cv::Mat& image) { (void)detect(model, image, schema, config); };

    for (int i = 0; i < warmup; ++i) run_once(images[i % images.size()]);

    std::vector<double> times;
    times.reserve(min_samples);
    for (int i = 0; i < min_samples; ++i) {
        const auto start = std::chrono::steady_clock::now();
        run_once(images[i % images.size()]);
        const auto stop = std::chrono::steady_clock::now();
        times.push_back(std::chrono::duration<double>(stop - start).count());
    }

    LatencyReport report;
    report.samples = static_cast<long>(times.size());
    double sum = 0.0;
    for (double t : times) sum += t;
    report.mean_s = sum / static_cast<double>(times.size());
    std::sort(times.begin(), times.end());
    const std::size_t n = times.size();
    report.median_s = n % 2 == 1 ? times[n / 2] : 0.5 * (times[n / 2 - 1] + times[n / 2]);
    const auto p95_index =
        std::min(n - 1, static_cast<std::size_t>(std::ceil(0.95 * static_cast<double>(n))) - 1);
    report.p95_s = times[p95_index];
    return report;
}

std::string LatencyReport::to_json_text() const {
    nlohmann::json j;
    j["samples"] = samples;
    j["mean_s"] = mean_s;
    j["median_s"] = median_s;
    j["p95_s"] = p95_s;
    return j.dump(2);
}

}  // namespace kpforge
