// kpforge: generate / train / eval / infer / bench / plot for 2D tool
// landmark detectors trained on synthetic composites.

#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>
#include <opencv2/core.hpp>
#include <torch/torch.h>

#include "kpforge/compositor.hpp"
#include "kpforge/image.hpp"
#include "kpforge/pipeline.hpp"
#include "kpforge/plotting.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitRuntime = 2;

void require_exists(const std::filesystem::path& path, const std::string& what) {
    if (!std::filesystem::exists(path))
        throw kpforge::ValidationError(what + " not found: " + path.string());
}

struct GenerateArgs {
    kpforge::GenerateOptions options;
};

struct TrainArgs {
    kpforge::TrainRunOptions options;
    std::string backbone_weights;
};

struct EvalArgs {
    kpforge::EvalOptions options;
    std::string alphas = "0.02:0.2:0.02";
    std::filesystem::path out;
};

struct InferArgs {
    std::filesystem::path checkpoint;
    std::filesystem::path image;
    std::filesystem::path dump_heatmaps;
    double threshold = 0.5;
    int level = 0;
};

struct PlotArgs {
    std::vector<std::filesystem::path> reports;
    std::filesystem::path out;
};

int run_generate(const GenerateArgs& args) {
    require_exists(args.options.assets_dir, "assets directory");
    require_exists(args.options.backgrounds_dir, "backgrounds directory");
    if (!args.options.distractors_dir.empty())
        require_exists(args.options.distractors_dir, "distractors directory");
    if (!args.options.schema_path.empty()) require_exists(args.options.schema_path, "schema");
    const kpforge::DatasetManifest manifest = kpforge::generate_dataset(args.options);
    nlohmann::json j;
    j["samples"] = manifest.samples.size();
    j["manifest"] = (args.options.out_dir / "manifest.jsonl").string();
    j["schema"] = (args.options.out_dir / "schema.json").string();
    std::cout << j.dump(2) << "\n";
    return kExitOk;
}

int run_train(TrainArgs& args) {
    require_exists(args.options.manifest, "manifest");
    require_exists(args.options.schema, "schema");
    if (!args.options.config.empty()) require_exists(args.options.config, "train config");
    if (!args.backbone_weights.empty()) {
        require_exists(args.backbone_weights, "backbone weights");
        args.options.backbone_weights = args.backbone_weights;
    }
    const kpforge::TrainState state = kpforge::run_training(args.options);
    nlohmann::json j;
    j["epochs_run"] = state.epochs_run;
    j["best_epoch"] = state.best_epoch;
    j["best_val_loss"] = state.best_val_loss;
    j["checkpoint"] = state.best_checkpoint.string();
    j["log"] = (args.options.out_dir / "training_log.csv").string();
    std::cout << j.dump(2) << "\n";
    return kExitOk;
}

int run_eval_cmd(EvalArgs& args) {
    require_exists(args.options.checkpoint, "checkpoint");
    require_exists(args.options.manifest, "manifest");
    args.options.alpha_grid = kpforge::parse_alpha_grid(args.alphas);
    const kpforge::EvalReport report = kpforge::run_eval(args.options);
    report.save(args.out);
    std::cout << "pck@" << report.pck_at_reference.alpha << " = " << report.pck_at_reference.pck
              << " (" << report.pck_at_reference.correct_count << "/"
              << report.pck_at_reference.total_count << ") -> " << args.out.string() << "\n";
    return kExitOk;
}

int run_infer(const InferArgs& args) {
    require_exists(args.checkpoint, "checkpoint");
    require_exists(args.image, "image");
    kpforge::KeypointSchema schema;
    kpforge::HeatmapNet model = kpforge::load_checkpoint(args.checkpoint, &schema);
    const cv::Mat image = kpforge::load_image_rgb(args.image);

    kpforge::DecodeConfig decode;
    decode.confidence_threshold = args.threshold;
    const auto detections = kpforge::detect(model, image, schema, decode, args.level);
    for (const auto& d : detections) {
        nlohmann::json j;
        j["name"] = d.name;
        j["x"] = d.x;
        j["y"] = d.y;
        j["confidence"] = d.confidence;
        std::cout << j.dump() << "\n";
    }
    if (!args.dump_heatmaps.empty()) {
        std::filesystem::create_directories(args.dump_heatmaps);
        const kpforge::HeatmapStack stack =
            kpforge::predict_stack(model, image, schema, args.level);
        for (int c = 0; c < stack.channels(); ++c) {
            cv::Mat plane(stack.height, stack.width, CV_32FC1,
                          const_cast<float*>(stack.plane(c)));
            kpforge::save_image_png(plane * 255.0f,
                                    args.dump_heatmaps / (stack.channel_names[c] + ".png"));
        }
    }
    return kExitOk;
}

int run_bench_cmd(const kpforge::BenchOptions& options) {
    require_exists(options.checkpoint, "checkpoint");
    require_exists(options.manifest, "manifest");
    const kpforge::LatencyReport report = kpforge::run_bench(options);
    std::cout << report.to_json_text() << "\n";
    return kExitOk;
}

int run_plot(const PlotArgs& args) {
    std::vector<kpforge::EvalReport> reports;
    for (const auto& path : args.reports) {
        require_exists(path, "report");
        reports.push_back(kpforge::EvalReport::load(path));
    }
    const kpforge::ComparisonTable table = kpforge::compare_reports(reports);
    const cv::Mat charts = kpforge::render_report_charts(reports);
    kpforge::save_image_png(charts, args.out);
    std::cout << table.format_text() << "charts -> " << args.out.string() << "\n";
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"kpforge: real-time 2D tool landmark detection toolkit"};
    app.require_subcommand(1);
    int threads = 0;
    app.add_option("--threads", threads, "CPU threads (0 = library default)");

    GenerateArgs gen;
    auto* generate = app.add_subcommand("generate", "Compose a labeled cut-and-paste dataset");
    generate->add_option("--assets", gen.options.assets_dir, "Foreground asset directory")->required();
    generate->add_option("--backgrounds", gen.options.backgrounds_dir, "Background image directory")->required();
    generate->add_option("--distractors", gen.options.distractors_dir,
                         "Distractor assets (adds occlusion/background-swap variants)");
    generate->add_option("--count", gen.options.count, "Number of base composites")->required();
    generate->add_option("--seed", gen.options.seed, "Random seed");
    generate->add_option("--out", gen.options.out_dir, "Output directory")->required();
    generate->add_option("--schema", gen.options.schema_path, "Keypoint schema (else derived)");
    generate->add_option("--canvas", gen.options.canvas, "Canvas size in pixels");

    TrainArgs tr;
    auto* train = app.add_subcommand("train", "Train a heatmap model on a manifest");
    train->add_option("--manifest", tr.options.manifest, "Training manifest")->required();
    train->add_option("--schema", tr.options.schema, "Keypoint schema")->required();
    train->add_option("--config", tr.options.config, "Train config JSON (defaults otherwise)");
    train->add_option("--variant", tr.options.variant, "ihm224 | ihm56 | hm")->required();
    train->add_option("--out", tr.options.out_dir, "Checkpoint output directory")->required();
    train->add_option("--seed", tr.options.seed, "Random seed");
    train->add_option("--val-fraction", tr.options.val_fraction, "Validation split fraction");
    train->add_option("--input-size", tr.options.input_size, "Model input size (multiple of 32)");
    train->add_option("--backbone-weights", tr.backbone_weights,
                      "Pretrained backbone export (tools/export_backbone.py)");
    train->add_flag("--allow-random-backbone", tr.options.allow_random_backbone,
                    "Accept a randomly initialized backbone (tests only)");

    EvalArgs ev;
    auto* eval = app.add_subcommand("eval", "Compute the PCK report for a checkpoint");
    eval->add_option("--checkpoint", ev.options.checkpoint, "Checkpoint directory")->required();
    eval->add_option("--manifest", ev.options.manifest, "Evaluation manifest")->required();
    eval->add_option("--alphas", ev.alphas, "Alpha grid start:stop:step or list");
    eval->add_option("--out", ev.out, "Report JSON path")->required();
    eval->add_option("--threshold", ev.options.confidence_threshold,
                     "Decode confidence threshold (0 = pure argmax)");
    eval->add_option("--level", ev.options.level_size, "Head size to decode (0 = finest)");
    eval->add_option("--model-id", ev.options.model_id, "Identifier in the report");
    eval->add_flag("--timing", ev.options.with_timing, "Include a latency summary");

    InferArgs inf;
    auto* infer = app.add_subcommand("infer", "Detect keypoints in one image");
    infer->add_option("--checkpoint", inf.checkpoint, "Checkpoint directory")->required();
    infer->add_option("--image", inf.image, "Input image")->required();
    infer->add_option("--threshold", inf.threshold, "Confidence threshold");
    infer->add_option("--level", inf.level, "Head size to decode (0 = finest)");
    infer->add_option("--dump-heatmaps", inf.dump_heatmaps,
                      "Write predicted channels as grayscale PNGs");

    kpforge::BenchOptions bench_options;
    auto* bench = app.add_subcommand("bench", "Measure forward+decode latency");
    bench->add_option("--checkpoint", bench_options.checkpoint, "Checkpoint directory")->required();
    bench->add_option("--manifest", bench_options.manifest, "Image source manifest")->required();
    bench->add_option("--warmup", bench_options.warmup, "Warm-up iterations");
    bench->add_option("--samples", bench_options.min_samples, "Timed samples");

    PlotArgs plot_args;
    auto* plot = app.add_subcommand("plot", "Render PCK curves + error bars from reports");
    plot->add_option("--reports", plot_args.reports, "Report JSON files")->required()->expected(-1);
    plot->add_option("--out", plot_args.out, "Output PNG")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }

    if (threads > 0) {
        torch::set_num_threads(threads);
        cv::setNumThreads(threads);
    }

    try {
        if (generate->parsed()) return run_generate(gen);
        if (train->parsed()) return run_train(tr);
        if (eval->parsed()) return run_eval_cmd(ev);
        if (infer->parsed()) return run_infer(inf);
        if (bench->parsed()) return run_bench_cmd(bench_options);
        if (plot->parsed()) return run_plot(plot_args);
    } catch (const kpforge::ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const kpforge::ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const kpforge::SchemaError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const kpforge::ParseError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
    return kExitUsage;
}
