#include "kpforge/pipeline.hpp"

#include <sstream>

#include "kpforge/image.hpp"

namespace kpforge {

std::vector<double> parse_alpha_grid(const std::string& text) {
    std::vector<double> grid;
    try {
        if (text.find(':') != std::string::npos) {
            std::stringstream ss(text);
            std::string part;
            std::vector<double> parts;
            while (std::getline(ss, part, ':')) parts.push_back(std::stod(part));
            if (parts.size() != 3) throw ConfigError("alpha grid: expected start:stop:step");
            const double start = parts[0], stop = parts[1], step = parts[2];
            if (!(step > 0.0) || !(start > 0.0) || stop < start)
                throw ConfigError("alpha grid: bad start:stop:step values");
            for (double a = start; a <= stop + 1e-12; a += step) grid.push_back(a);
        } else {
            std::stringstream ss(text);
            std::string part;
            while (std::getline(ss, part, ',')) grid.push_back(std::stod(part));
        }
    } catch (const std::invalid_argument&) {
        throw ConfigError("alpha grid: cannot parse '" + text + "'");
    } catch (const std::out_of_range&) {
        throw ConfigError("alpha grid: value out of range in '" + text + "'");
    }
    if (grid.empty()) throw ConfigError("alpha grid: empty");
    return grid;
}

EvalReport run_eval(const EvalOptions& options) {
    KeypointSchema schema;
    HeatmapNet model = load_checkpoint(options.checkpoint, &schema);
    const DatasetManifest manifest = load_manifest(options.manifest, schema);
    if (manifest.samples.empty()) throw ValidationError("eval: manifest is empty");

    const std::vector<double> grid =
        options.alpha_grid.empty() ? parse_alpha_grid("0.02:0.2:0.02") : options.alpha_grid;

    DecodeConfig decode;
    decode.confidence_threshold = options.confidence_threshold;

    DetectionsPerImage detections;
    std::vector<cv::Mat> images;
    images.reserve(std::min<std::size_t>(manifest.samples.size(), 128));
    const int input_size = model->config().input_size;
    for (const auto& annotation : manifest.samples) {
        const cv::Mat image = load_image_rgb(manifest.image_file(annotation));
        auto dets = detect(model, image, schema, decode, options.level_size);
        // Back to the annotation's pixel frame.
        const double sx = static_cast<double>(annotation.width) / input_size;
        const double sy = static_cast<double>(annotation.height) / input_size;
        for (auto& d : dets) {
            d.x *= sx;
            d.y *= sy;
        }
        detections.push_back(std::move(dets));
        if (options.with_timing && images.size() < 128) images.push_back(image);
    }

    EvalReport report;
    report.model_id =
        options.model_id.empty()
            ? std::filesystem::absolute(options.checkpoint).filename().string()
            : options.model_id;
    report.curve = pck_curve(detections, manifest.samples, schema, grid);
    report.pck_at_reference =
        pck(detections, manifest.samples, schema, options.reference_alpha);
    report.errors =
        localization_error(detections, manifest.samples, schema, options.reference_alpha);
    if (options.with_timing) {
        const LatencyReport timing = benchmark_latency(model, images, schema, decode);
        report.timing =
            TimingSummary{timing.samples, timing.mean_s, timing.median_s, timing.p95_s};
    }
    return report;
}

TrainState run_training(const TrainRunOptions& options) {
    const KeypointSchema schema = KeypointSchema::load(options.schema);
    const DatasetManifest manifest = load_manifest(options.manifest, schema);
    if (manifest.samples.empty()) throw ValidationError("train: manifest is empty");
    if (!(options.val_fraction > 0.0 && options.val_fraction < 1.0))
        throw ConfigError("train: val_fraction must be in (0, 1)");

    TrainConfig config =
        options.config.empty() ? TrainConfig{} : TrainConfig::load(options.config);
    if (config.seed == 0) config.seed = options.seed;

    const auto [train_set, val_set] = split_dataset(manifest, options.val_fraction, options.seed);

    const ModelConfig model_config =
        ModelConfig::variant(options.variant, schema.num_channels(), options.input_size);
    BuildOptions build;
    build.pretrained_backbone = options.backbone_weights;
    build.allow_random_backbone = options.allow_random_backbone;
    build.seed = options.seed;
    HeatmapNet model = build_model(model_config, build);

    return train(model, train_set, val_set, config, options.out_dir);
}

LatencyReport run_bench(const BenchOptions& options) {
    KeypointSchema schema;
    HeatmapNet model = load_checkpoint(options.checkpoint, &schema);
    const DatasetManifest manifest = load_manifest(options.manifest, schema);
    if (manifest.samples.empty()) throw ValidationError("bench: manifest is empty");

    std::vector<cv::Mat> images;
    const std::size_t take = std::min<std::size_t>(manifest.samples.size(), 128);
    for (std::size_t i = 0; i < take; ++i) {
        images.push_back(load_image_rgb(manifest.image_file(manifest.samples[i])));
    }
    DecodeConfig decode;
    decode.confidence_threshold = options.confidence_threshold;
    return benchmark_latency(model, images, schema, decode, options.warmup, options.min_samples);
}

}  // namespace kpforge
