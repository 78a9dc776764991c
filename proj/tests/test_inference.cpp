#include <doctest.h>

#include <chrono>

#include <json.hpp>

#include "helpers.hpp"
#include "kpforge/inference.hpp"

using namespace kpforge;
using kpforge::testing::make_annotation;
using kpforge::testing::make_schema;

namespace {

HeatmapNet tiny_model(const KeypointSchema& schema, int levels = 2, int input = 32) {
    ModelConfig config;
    config.input_size = input;
    config.num_upsample_levels = levels;
    config.base_filters = 16;
    config.num_channels = schema.num_channels();
    BuildOptions options;
    options.allow_random_backbone = true;
    options.seed = 11;
    return build_model(config, options);
}

cv::Mat noise_image(int size, std::uint64_t seed) {
    Rng rng(seed);
    cv::Mat image(size, size, CV_32FC3);
    for (int y = 0; y < size; ++y) {
        float* row = image.ptr<float>(y);
        for (int i = 0; i < size * 3; ++i) row[i] = static_cast<float>(rng.uniform(0.0, 255.0));
    }
    return image;
}

}  // namespace

TEST_CASE("detect reports input-image pixel coordinates from any head") {
    const auto schema = make_schema({"tip", "butt"});
    auto model = tiny_model(schema);  // heads at 2 and 4 for input 32

    DecodeConfig config;
    config.confidence_threshold = 0.0;  // argmax always yields one per channel
    const auto image = noise_image(32, 4);

    const auto finest = detect(model, image, schema, config);
    REQUIRE(finest.size() == 2);
    for (const auto& det : finest) {
        CHECK(det.x < 32.0);
        CHECK(det.y < 32.0);
        // finest head is 4x4 -> coordinates quantized to an 8 px grid
        CHECK(static_cast<long>(det.x) % 8 == 0);
    }

    const auto coarse = detect(model, image, schema, config, 2);
    REQUIRE(coarse.size() == 2);
    for (const auto& det : coarse) CHECK(static_cast<long>(det.x) % 16 == 0);

    CHECK_THROWS_AS(detect(model, image, schema, config, 3), ConfigError);
}

TEST_CASE("detect is deterministic and resizes arbitrary inputs") {
    const auto schema = make_schema({"tip", "butt"});
    auto model = tiny_model(schema);
    DecodeConfig config;
    config.confidence_threshold = 0.0;
    const auto image = noise_image(50, 9);  // not the input size
    const auto a = detect(model, image, schema, config);
    const auto b = detect(model, image, schema, config);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].x == b[i].x);
        CHECK(a[i].y == b[i].y);
        CHECK(a[i].confidence == b[i].confidence);
    }
}

TEST_CASE("predict_stack exposes the head layout") {
    const auto schema = make_schema({"tip", "a", "b"}, {{"a", "b"}});
    auto model = tiny_model(schema);
    const auto stack = predict_stack(model, noise_image(32, 3), schema);
    CHECK(stack.width == 4);
    CHECK(stack.height == 4);
    CHECK(stack.channel_names == schema.channel_names());
    for (float v : stack.values) {
        CHECK(v > 0.0f);
        CHECK(v < 1.0f);
    }
}

TEST_CASE("latency benchmark reports the requested sample count") {
    const auto schema = make_schema({"tip"});
    auto model = tiny_model(schema, 1);
    std::vector<cv::Mat> images;
    for (int i = 0; i < 7; ++i) images.push_back(noise_image(32, 100 + i));

    const auto report = benchmark_latency(model, images, schema, {}, 2, 100);
    CHECK(report.samples == 100);
    CHECK(report.mean_s > 0.0);
    CHECK(report.median_s > 0.0);
    CHECK(report.p95_s >= report.median_s);

    const auto parsed = nlohmann::json::parse(report.to_json_text());
    CHECK(parsed.at("samples").get<long>() == 100);

    CHECK_THROWS_AS(benchmark_latency(model, {}, schema, {}), ValidationError);
    CHECK_THROWS_AS(benchmark_latency(model, images, schema, {}, -1, 10), ConfigError);
}

TEST_CASE("decode microbenchmark stays under 5 ms per 224x224x2 stack") {
    const auto schema = make_schema({"a", "b"}, {{"a", "b"}});
    Rng rng(2);
    HeatmapStack stack;
    stack.width = 224;
    stack.height = 224;
    stack.channel_names = schema.channel_names();
    stack.values.resize(static_cast<std::size_t>(224) * 224 * stack.channels());

    DecodeConfig config;
    config.confidence_threshold = 0.5;
    const int runs = 50;
    double total = 0.0;
    for (int i = 0; i < runs; ++i) {
        for (auto& v : stack.values) v = static_cast<float>(rng.uniform());
        const auto start = std::chrono::steady_clock::now();
        (void)decode_heatmaps(stack, schema, config);
        total += std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    }
    CHECK(total / runs < 0.005);
}
