#include "kpforge/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>
#include <opencv2/imgproc.hpp>

#include "kpforge/heatmap.hpp"
#include "kpforge/image.hpp"
#include "kpforge/rng.hpp"

namespace kpforge {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Configs

namespace {

void check_range(const ValueRange& r, bool enabled, const char* name) {
    if (!enabled) return;
    if (!std::isfinite(r.lo) || !std::isfinite(r.hi) || r.lo > r.hi)
        throw ConfigError(std::string("augmentation: invalid range for ") + name);
}

json range_to_json(const ValueRange& r) { return {r.lo, r.hi}; }

ValueRange range_from_json(const json& j) {
    const auto v = j.get<std::vector<double>>();
    if (v.size() != 2) throw ParseError("augmentation range must be [lo, hi]");
    return {v[0], v[1]};
}

}  // namespace

void AugmentationConfig::validate() const {
    check_range(rotation_deg, affine_enabled, "rotation_deg");
    check_range(translation_frac, affine_enabled, "translation_frac");
    check_range(scale, affine_enabled, "scale");
    check_range(shear_deg, affine_enabled, "shear_deg");
    if (affine_enabled && scale.lo <= 0.0)
        throw ConfigError("augmentation: scale range must be positive");
    if (perspective_enabled &&
        !(perspective_jitter_frac >= 0.0 && perspective_jitter_frac < 0.5))
        throw ConfigError("augmentation: perspective_jitter_frac must be in [0, 0.5)");
    check_range(blur_radius_px, blur_enabled, "blur_radius_px");
    if (blur_enabled && blur_radius_px.lo < 0.0)
        throw ConfigError("augmentation: blur radius must be >= 0");
    check_range(add_value, add_enabled, "add_value");
    check_range(multiply, multiply_enabled, "multiply");
    if (multiply_enabled && multiply.lo <= 0.0)
        throw ConfigError("augmentation: multiply range must be positive");
    check_range(noise_sigma, noise_enabled, "noise_sigma");
    if (noise_enabled && noise_sigma.lo < 0.0)
        throw ConfigError("augmentation: noise sigma must be >= 0");
}

AugmentationConfig AugmentationConfig::disabled() {
    AugmentationConfig config;
    config.affine_enabled = false;
    config.perspective_enabled = false;
    config.blur_enabled = false;
    config.add_enabled = false;
    config.multiply_enabled = false;
    config.noise_enabled = false;
    return config;
}

void TrainConfig::validate() const {
    if (!(learning_rate > 0.0)) throw ConfigError("train: learning_rate must be positive");
    if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
    if (max_epochs < 1) throw ConfigError("train: max_epochs must be >= 1");
    if (early_stop_patience < 1 || plateau_patience < 1)
        throw ConfigError("train: patience values must be >= 1");
    if (plateau_patience >= early_stop_patience)
        throw ConfigError("train: plateau_patience must be < early_stop_patience");
    if (!(plateau_factor > 0.0 && plateau_factor < 1.0))
        throw ConfigError("train: plateau_factor must be in (0, 1)");
    if (!(improvement_threshold >= 0.0))
        throw ConfigError("train: improvement_threshold must be >= 0");
    augmentation.validate();
}

std::string TrainConfig::to_json_text() const {
    json aug;
    aug["affine_enabled"] = augmentation.affine_enabled;
    aug["rotation_deg"] = range_to_json(augmentation.rotation_deg);
    aug["translation_frac"] = range_to_json(augmentation.translation_frac);
    aug["scale"] = range_to_json(augmentation.scale);
    aug["shear_deg"] = range_to_json(augmentation.shear_deg);
    aug["perspective_enabled"] = augmentation.perspective_enabled;
    aug["perspective_jitter_frac"] = augmentation.perspective_jitter_frac;
    aug["blur_enabled"] = augmentation.blur_enabled;
    aug["blur_radius_px"] = range_to_json(augmentation.blur_radius_px);
    aug["add_enabled"] = augmentation.add_enabled;
    aug["add_value"] = range_to_json(augmentation.add_value);
    aug["multiply_enabled"] = augmentation.multiply_enabled;
    aug["multiply"] = range_to_json(augmentation.multiply);
    aug["noise_enabled"] = augmentation.noise_enabled;
    aug["noise_sigma"] = range_to_json(augmentation.noise_sigma);

    json j;
    j["learning_rate"] = learning_rate;
    j["batch_size"] = batch_size;
    j["max_epochs"] = max_epochs;
    j["early_stop_patience"] = early_stop_patience;
    j["plateau_patience"] = plateau_patience;
    j["plateau_factor"] = plateau_factor;
    j["improvement_threshold"] = improvement_threshold;
    j["seed"] = seed;
    j["augmentation"] = aug;
    return j.dump(2);
}

TrainConfig TrainConfig::from_json_text(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ParseError(std::string("train config: ") + e.what());
    }
    TrainConfig config;
    try {
        if (j.contains("learning_rate")) config.learning_rate = j.at("learning_rate").get<double>();
        if (j.contains("batch_size")) config.batch_size = j.at("batch_size").get<int>();
        if (j.contains("max_epochs")) config.max_epochs = j.at("max_epochs").get<int>();
        if (j.contains("early_stop_patience"))
            config.early_stop_patience = j.at("early_stop_patience").get<int>();
        if (j.contains("plateau_patience"))
            config.plateau_patience = j.at("plateau_patience").get<int>();
        if (j.contains("plateau_factor")) config.plateau_factor = j.at("plateau_factor").get<double>();
        if (j.contains("improvement_threshold"))
            config.improvement_threshold = j.at("improvement_threshold").get<double>();
        if (j.contains("seed")) config.seed = j.at("seed").get<std::uint64_t>();
        if (j.contains("augmentation")) {
            const auto& aug = j.at("augmentation");
            auto& a = config.augmentation;
            if (aug.contains("affine_enabled")) a.affine_enabled = aug.at("affine_enabled").get<bool>();
            if (aug.contains("rotation_deg")) a.rotation_deg = range_from_json(aug.at("rotation_deg"));
            if (aug.contains("translation_frac"))
                a.translation_frac = range_from_json(aug.at("translation_frac"));
            if (aug.contains("scale")) a.scale = range_from_json(aug.at("scale"));
            if (aug.contains("shear_deg")) a.shear_deg = range_from_json(aug.at("shear_deg"));
            if (aug.contains("perspective_enabled"))
                a.perspective_enabled = aug.at("perspective_enabled").get<bool>();
            if (aug.contains("perspective_jitter_frac"))
                a.perspective_jitter_frac = aug.at("perspective_jitter_frac").get<double>();
            if (aug.contains("blur_enabled")) a.blur_enabled = aug.at("blur_enabled").get<bool>();
            if (aug.contains("blur_radius_px")) a.blur_radius_px = range_from_json(aug.at("blur_radius_px"));
            if (aug.contains("add_enabled")) a.add_enabled = aug.at("add_enabled").get<bool>();
            if (aug.contains("add_value")) a.add_value = range_from_json(aug.at("add_value"));
            if (aug.contains("multiply_enabled"))
                a.multiply_enabled = aug.at("multiply_enabled").get<bool>();
            if (aug.contains("multiply")) a.multiply = range_from_json(aug.at("multiply"));
            if (aug.contains("noise_enabled")) a.noise_enabled = aug.at("noise_enabled").get<bool>();
            if (aug.contains("noise_sigma")) a.noise_sigma = range_from_json(aug.at("noise_sigma"));
        }
    } catch (const json::exception& e) {
        throw ParseError(std::string("train config: ") + e.what());
    }
    config.validate();
    return config;
}

TrainConfig TrainConfig::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open train config: " + path.string());
    std::stringstream buffer;
    buffer << in.rdbuf();
    return from_json_text(buffer.str());
}

// ---------------------------------------------------------------------------
// Loss

torch::Tensor multiscale_loss(const std::vector<torch::Tensor>& predictions,
                              const std::vector<torch::Tensor>& targets) {
    if (predictions.empty() || predictions.size() != targets.size())
        throw ValidationError("multiscale_loss: prediction/target level counts differ");
    torch::Tensor total;
    for (std::size_t k = 0; k < predictions.size(); ++k) {
        if (predictions[k].sizes() != targets[k].sizes())
            throw ValidationError("multiscale_loss: shape mismatch at level " + std::to_string(k));
        torch::Tensor level = (predictions[k] - targets[k]).pow(2).mean();
        total = total.defined() ? total + level : level;
    }
    return total;
}

// ---------------------------------------------------------------------------
// Augmentation

namespace {

using Mat3 = std::array<double, 9>;  // row-major 3x3

Mat3 identity3() { return {1, 0, 0, 0, 1, 0, 0, 0, 1}; }

Mat3 matmul3(const Mat3& a, const Mat3& b) {
    Mat3 out{};
    for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 3; ++c) {
            out[r * 3 + c] =
                a[r * 3] * b[c] + a[r * 3 + 1] * b[3 + c] + a[r * 3 + 2] * b[6 + c];
        }
    }
    return out;
}

cv::Point2d apply3(const Mat3& h, const cv::Point2d& p) {
    const double w = h[6] * p.x + h[7] * p.y + h[8];
    return {(h[0] * p.x + h[1] * p.y + h[2]) / w, (h[3] * p.x + h[4] * p.y + h[5]) / w};
}

bool is_affine(const Mat3& h) { return h[6] == 0.0 && h[7] == 0.0 && h[8] == 1.0; }

/// Geometric map for one draw: affine (rotation/scale/shear about the
/// center, translation) optionally composed with a corner-jitter perspective.
Mat3 sample_geometry(const AugmentationConfig& config, const cv::Size& size, Rng& rng) {
    Mat3 h = identity3();
    if (config.affine_enabled) {
        const double theta = rng.uniform(config.rotation_deg.lo, config.rotation_deg.hi) * M_PI / 180.0;
        const double s = rng.uniform(config.scale.lo, config.scale.hi);
        const double shear = std::tan(rng.uniform(config.shear_deg.lo, config.shear_deg.hi) * M_PI / 180.0);
        const double tx = rng.uniform(config.translation_frac.lo, config.translation_frac.hi) * size.width;
        const double ty = rng.uniform(config.translation_frac.lo, config.translation_frac.hi) * size.height;
        const double cx = (size.width - 1) / 2.0;
        const double cy = (size.height - 1) / 2.0;

        const double a = s * std::cos(theta);
        const double b = s * std::sin(theta);
        // R*S followed by shear in x
        const double m00 = a + shear * b;
        const double m01 = -b + shear * a;
        const double m10 = b;
        const double m11 = a;
        h = {m00, m01, cx + tx - (m00 * cx + m01 * cy),
             m10, m11, cy + ty - (m10 * cx + m11 * cy),
             0.0, 0.0, 1.0};
    }
    if (config.perspective_enabled && config.perspective_jitter_frac > 0.0) {
        const double j = config.perspective_jitter_frac;
        const double w = size.width - 1.0;
        const double hgt = size.height - 1.0;
        std::vector<cv::Point2f> src = {{0.0f, 0.0f},
                                        {static_cast<float>(w), 0.0f},
                                        {static_cast<float>(w), static_cast<float>(hgt)},
                                        {0.0f, static_cast<float>(hgt)}};
        std::vector<cv::Point2f> dst;
        for (const auto& p : src) {
            dst.emplace_back(
                static_cast<float>(p.x + rng.uniform(-j, j) * size.width),
                static_cast<float>(p.y + rng.uniform(-j, j) * size.height));
        }
        const cv::Mat p = cv::getPerspectiveTransform(src, dst);
        Mat3 persp;
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c) persp[r * 3 + c] = p.at<double>(r, c);
        h = matmul3(persp, h);
    }
    return h;
}

cv::Mat warp_by(const Mat3& h, const cv::Mat& image) {
    if (is_affine(h)) {
        cv::Mat m(2, 3, CV_64FC1);
        for (int r = 0; r < 2; ++r)
            for (int c = 0; c < 3; ++c) m.at<double>(r, c) = h[r * 3 + c];
        cv::Mat out;
        cv::warpAffine(image, out, m, image.size(), cv::INTER_LINEAR, cv::BORDER_REFLECT_101);
        return out;
    }
    cv::Mat m(3, 3, CV_64FC1);
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) m.at<double>(r, c) = h[r * 3 + c];
    cv::Mat out;
    cv::warpPerspective(image, out, m, image.size(), cv::INTER_LINEAR, cv::BORDER_REFLECT_101);
    return out;
}

}  // namespace

std::pair<cv::Mat, SampleAnnotation> augment(const cv::Mat& image,
                                             const SampleAnnotation& annotation,
                                             const AugmentationConfig& config,
                                             std::uint64_t seed) {
    config.validate();
    if (image.empty() || image.type() != CV_32FC3)
        throw ValidationError("augment: image must be CV_32FC3");

    const cv::Size size = image.size();
    const bool geometric = config.affine_enabled || config.perspective_enabled;
    int visible_before = 0;
    for (const auto& kp : annotation.keypoints) visible_before += kp.visible ? 1 : 0;

    constexpr int kMaxAttempts = 20;
    for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
        Rng rng = Rng::stream(seed, static_cast<std::uint64_t>(attempt));
        SampleAnnotation out_ann = annotation;
        Mat3 h = identity3();

        if (geometric) {
            h = sample_geometry(config, size, rng);
            int visible_after = 0;
            for (auto& kp : out_ann.keypoints) {
                const cv::Point2d p = apply3(h, {kp.x, kp.y});
                kp.x = p.x;
                kp.y = p.y;
                const bool in_frame =
                    p.x >= 0.0 && p.x < size.width && p.y >= 0.0 && p.y < size.height;
                if (!in_frame) kp.visible = false;
                if (kp.visible) ++visible_after;
            }
            if (visible_before > 0 && visible_after == 0) continue;  // resample

            const std::array<cv::Point2d, 4> corners = {
                apply3(h, {annotation.bbox.x_min, annotation.bbox.y_min}),
                apply3(h, {annotation.bbox.x_max, annotation.bbox.y_min}),
                apply3(h, {annotation.bbox.x_max, annotation.bbox.y_max}),
                apply3(h, {annotation.bbox.x_min, annotation.bbox.y_max})};
            BBox box{corners[0].x, corners[0].y, corners[0].x, corners[0].y};
            for (const auto& c : corners) {
                box.x_min = std::min(box.x_min, c.x);
                box.y_min = std::min(box.y_min, c.y);
                box.x_max = std::max(box.x_max, c.x);
                box.y_max = std::max(box.y_max, c.y);
            }
            box.x_min = std::clamp(box.x_min, 0.0, static_cast<double>(size.width));
            box.x_max = std::clamp(box.x_max, 0.0, static_cast<double>(size.width));
            box.y_min = std::clamp(box.y_min, 0.0, static_cast<double>(size.height));
            box.y_max = std::clamp(box.y_max, 0.0, static_cast<double>(size.height));
            if (!(box.x_min < box.x_max && box.y_min < box.y_max)) continue;  // degenerate
            out_ann.bbox = box;
        }

        cv::Mat out = geometric ? warp_by(h, image) : image.clone();

        if (config.blur_enabled) {
            const double radius = rng.uniform(config.blur_radius_px.lo, config.blur_radius_px.hi);
            if (radius > 0.05) cv::GaussianBlur(out, out, cv::Size(0, 0), radius);
        }
        if (config.add_enabled) {
            out += rng.uniform(config.add_value.lo, config.add_value.hi);
        }
        if (config.multiply_enabled) {
            out *= rng.uniform(config.multiply.lo, config.multiply.hi);
        }
        if (config.noise_enabled) {
            const double sigma = rng.uniform(config.noise_sigma.lo, config.noise_sigma.hi);
            if (sigma > 0.0) {
                for (int y = 0; y < out.rows; ++y) {
                    float* row = out.ptr<float>(y);
                    for (int i = 0; i < out.cols * 3; ++i) {
                        row[i] += static_cast<float>(rng.normal(0.0, sigma));
                    }
                }
            }
        }
        if (config.blur_enabled || config.add_enabled || config.multiply_enabled ||
            config.noise_enabled) {
            cv::max(out, 0.0, out);
            cv::min(out, 255.0, out);
        }
        return {out, out_ann};
    }
    throw TrainingError("augment: transform kept pushing all keypoints off-frame (seed " +
                        std::to_string(seed) + ")");
}

// ---------------------------------------------------------------------------
// Training loop

namespace {

struct LoadedSample {
    cv::Mat image;  // CV_32FC3 RGB at input_size
    SampleAnnotation annotation;
};

LoadedSample load_for_input(const DatasetManifest& manifest, const SampleAnnotation& annotation,
                            int input_size) {
    LoadedSample sample;
    sample.image = load_image_rgb(manifest.image_file(annotation));
    sample.annotation = annotation;
    if (sample.image.cols != annotation.width || sample.image.rows != annotation.height)
        throw ValidationError("sample '" + annotation.image_path +
                              "': file size does not match the annotation");
    if (sample.image.cols != input_size || sample.image.rows != input_size) {
        const double sx = static_cast<double>(input_size) / sample.image.cols;
        const double sy = static_cast<double>(input_size) / sample.image.rows;
        cv::resize(sample.image, sample.image, {input_size, input_size}, 0, 0, cv::INTER_LINEAR);
        for (auto& kp : sample.annotation.keypoints) {
            kp.x *= sx;
            kp.y *= sy;
        }
        sample.annotation.bbox.x_min *= sx;
        sample.annotation.bbox.x_max *= sx;
        sample.annotation.bbox.y_min *= sy;
        sample.annotation.bbox.y_max *= sy;
        sample.annotation.width = input_size;
        sample.annotation.height = input_size;
    }
    return sample;
}

/// Stacks one batch: normalized image tensor plus one target tensor per
/// supervision level.
struct Batch {
    torch::Tensor images;
    std::vector<torch::Tensor> targets;
};

std::vector<torch::Tensor> target_tensors(const SampleAnnotation& annotation,
                                          const KeypointSchema& schema,
                                          const std::vector<int>& level_sizes) {
    std::vector<torch::Tensor> out;
    const HeatmapPyramid pyramid = render_pyramid(annotation, schema, level_sizes);
    for (const auto& stack : pyramid.levels) {
        torch::Tensor t = torch::empty({1, stack.channels(), stack.height, stack.width});
        std::memcpy(t.data_ptr<float>(), stack.values.data(),
                    stack.values.size() * sizeof(float));
        out.push_back(std::move(t));
    }
    return out;
}

Batch make_batch(const std::vector<LoadedSample>& samples, const KeypointSchema& schema,
                 const std::vector<int>& level_sizes) {
    const auto batch = static_cast<long>(samples.size());
    Batch out;
    out.images = torch::empty({batch, 3, samples[0].image.rows, samples[0].image.cols});
    std::vector<std::vector<torch::Tensor>> per_level(level_sizes.size());
    for (long i = 0; i < batch; ++i) {
        out.images[i] = to_input_tensor(samples[i].image).squeeze(0);
        auto targets = target_tensors(samples[i].annotation, schema, level_sizes);
        for (std::size_t l = 0; l < targets.size(); ++l)
            per_level[l].push_back(std::move(targets[l]));
    }
    for (auto& level : per_level) out.targets.push_back(torch::cat(level, 0));
    return out;
}

/// With a frozen backbone and augmentation off, every epoch sees identical
/// backbone activations and targets; both are computed once. Capped so large
/// datasets fall back to streaming.
struct FrozenSample {
    BackbonePyramid features;
    std::vector<torch::Tensor> targets;
};

constexpr std::size_t kFeatureCacheLimit = 512;

bool cache_eligible(const HeatmapNet& model, const AugmentationConfig& aug, std::size_t samples) {
    const bool augmented = aug.affine_enabled || aug.perspective_enabled || aug.blur_enabled ||
                           aug.add_enabled || aug.multiply_enabled || aug.noise_enabled;
    return model->config().backbone_frozen && !augmented && samples <= kFeatureCacheLimit;
}

std::vector<FrozenSample> precompute_frozen(HeatmapNet& model, const DatasetManifest& set,
                                            const std::vector<int>& level_sizes) {
    torch::NoGradGuard no_grad;
    model->eval();
    std::vector<FrozenSample> out;
    out.reserve(set.samples.size());
    for (const auto& annotation : set.samples) {
        LoadedSample sample = load_for_input(set, annotation, model->config().input_size);
        FrozenSample fs;
        fs.features = model->extract_features(to_input_tensor(sample.image));
        fs.targets = target_tensors(sample.annotation, set.schema, level_sizes);
        out.push_back(std::move(fs));
    }
    return out;
}

/// Concatenates cached per-sample tensors into one batch.
struct FrozenBatch {
    BackbonePyramid features;
    std::vector<torch::Tensor> targets;
};

FrozenBatch gather_frozen(const std::vector<FrozenSample>& cache,
                          const std::vector<std::size_t>& indices) {
    std::vector<torch::Tensor> s2, s4, s8, s16, s32;
    std::vector<std::vector<torch::Tensor>> per_level(cache[indices[0]].targets.size());
    for (std::size_t i : indices) {
        const auto& fs = cache[i];
        s2.push_back(fs.features.s2);
        s4.push_back(fs.features.s4);
        s8.push_back(fs.features.s8);
        s16.push_back(fs.features.s16);
        s32.push_back(fs.features.s32);
        for (std::size_t l = 0; l < fs.targets.size(); ++l)
            per_level[l].push_back(fs.targets[l]);
    }
    FrozenBatch batch;
    batch.features = {torch::cat(s2, 0), torch::cat(s4, 0), torch::cat(s8, 0),
                      torch::cat(s16, 0), torch::cat(s32, 0)};
    for (auto& level : per_level) batch.targets.push_back(torch::cat(level, 0));
    return batch;
}

double run_validation(HeatmapNet& model, const DatasetManifest& val_set, int batch_size,
                      const std::vector<FrozenSample>* cache) {
    torch::NoGradGuard no_grad;
    model->eval();
    const auto level_sizes = model->config().head_sizes();
    double loss_sum = 0.0;
    std::size_t counted = 0;

    if (cache != nullptr) {
        std::vector<std::size_t> batch;
        auto flush = [&]() {
            if (batch.empty()) return;
            const FrozenBatch tensors = gather_frozen(*cache, batch);
            const auto outputs = model->forward_features(tensors.features);
            loss_sum += multiscale_loss(outputs, tensors.targets).item<double>() *
                        static_cast<double>(batch.size());
            counted += batch.size();
            batch.clear();
        };
        for (std::size_t i = 0; i < cache->size(); ++i) {
            batch.push_back(i);
            if (batch.size() == static_cast<std::size_t>(batch_size)) flush();
        }
        flush();
        return loss_sum / static_cast<double>(counted);
    }

    std::vector<LoadedSample> batch;
    auto flush = [&]() {
        if (batch.empty()) return;
        Batch tensors = make_batch(batch, val_set.schema, level_sizes);
        const auto outputs = model->forward(tensors.images);
        const double loss = multiscale_loss(outputs, tensors.targets).item<double>();
        loss_sum += loss * static_cast<double>(batch.size());
        counted += batch.size();
        batch.clear();
    };
    for (const auto& annotation : val_set.samples) {
        batch.push_back(load_for_input(val_set, annotation, model->config().input_size));
        if (batch.size() == static_cast<std::size_t>(batch_size)) flush();
    }
    flush();
    return loss_sum / static_cast<double>(counted);
}

}  // namespace

TrainState train(HeatmapNet& model, const DatasetManifest& train_set,
                 const DatasetManifest& val_set, const TrainConfig& config,
                 const std::filesystem::path& out_dir) {
    config.validate();
    if (train_set.samples.empty() || val_set.samples.empty())
        throw ValidationError("train: train/validation sets must be non-empty");
    {
        std::set<std::string> train_paths;
        for (const auto& s : train_set.samples) train_paths.insert(s.image_path);
        for (const auto& s : val_set.samples) {
            if (train_paths.count(s.image_path) && train_set.root == val_set.root)
                throw ValidationError("train: validation sample '" + s.image_path +
                                      "' also appears in the training set");
        }
    }
    const KeypointSchema& schema = train_set.schema;
    if (schema.num_channels() != model->config().num_channels)
        throw ValidationError("train: schema channels (" + std::to_string(schema.num_channels()) +
                              ") do not match the model (" +
                              std::to_string(model->config().num_channels) + ")");

    std::filesystem::create_directories(out_dir);
    std::ofstream csv(out_dir / "training_log.csv");
    if (!csv) throw IoError("cannot write " + (out_dir / "training_log.csv").string());
    csv << "epoch,train_loss,val_loss,lr\n";

    auto trainable = model->trainable_parameters();
    if (trainable.empty()) throw TrainingError("train: no trainable parameters");
    torch::optim::Adam optimizer(trainable, torch::optim::AdamOptions(config.learning_rate));
    const auto level_sizes = model->config().head_sizes();

    const bool frozen_fast_path = cache_eligible(
        model, config.augmentation, train_set.samples.size() + val_set.samples.size());
    std::vector<FrozenSample> train_cache, val_cache;
    if (frozen_fast_path) {
        train_cache = precompute_frozen(model, train_set, level_sizes);
        val_cache = precompute_frozen(model, val_set, level_sizes);
    }

    TrainState state;
    double lr = config.learning_rate;
    int stall_epochs = 0;
    int plateau_counter = 0;

    for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
        model->train(true);
        std::vector<std::size_t> order(train_set.samples.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        Rng shuffle_rng = Rng::stream(config.seed, 0x5eedull + static_cast<std::uint64_t>(epoch));
        shuffle_rng.shuffle(order);

        double train_loss_sum = 0.0;
        std::size_t trained = 0;
        std::size_t batch_id = 0;

        auto optimize = [&](const std::vector<torch::Tensor>& outputs,
                            const std::vector<torch::Tensor>& targets, std::size_t batch_size) {
            torch::Tensor loss = multiscale_loss(outputs, targets);
            const double loss_value = loss.item<double>();
            if (!std::isfinite(loss_value))
                throw TrainingError("train: non-finite loss at epoch " + std::to_string(epoch) +
                                    " batch " + std::to_string(batch_id) + " (lr " +
                                    std::to_string(lr) + ")");
            loss.backward();
            optimizer.step();
            train_loss_sum += loss_value * static_cast<double>(batch_size);
            trained += batch_size;
            ++batch_id;
        };

        if (frozen_fast_path) {
            std::vector<std::size_t> batch;
            auto step = [&]() {
                if (batch.empty()) return;
                const FrozenBatch tensors = gather_frozen(train_cache, batch);
                optimizer.zero_grad();
                optimize(model->forward_features(tensors.features), tensors.targets,
                         batch.size());
                batch.clear();
            };
            for (std::size_t rank = 0; rank < order.size(); ++rank) {
                batch.push_back(order[rank]);
                if (batch.size() == static_cast<std::size_t>(config.batch_size)) step();
            }
            step();
        } else {
            std::vector<LoadedSample> batch;
            auto step = [&]() {
                if (batch.empty()) return;
                Batch tensors = make_batch(batch, schema, level_sizes);
                optimizer.zero_grad();
                optimize(model->forward(tensors.images), tensors.targets, batch.size());
                batch.clear();
            };
            for (std::size_t rank = 0; rank < order.size(); ++rank) {
                const auto& annotation = train_set.samples[order[rank]];
                LoadedSample sample =
                    load_for_input(train_set, annotation, model->config().input_size);
                const std::uint64_t aug_seed =
                    (static_cast<std::uint64_t>(epoch) << 32) ^ order[rank] ^ config.seed;
                auto [aug_image, aug_annotation] =
                    augment(sample.image, sample.annotation, config.augmentation, aug_seed);
                batch.push_back({std::move(aug_image), std::move(aug_annotation)});
                if (batch.size() == static_cast<std::size_t>(config.batch_size)) step();
            }
            step();
        }

        const double train_loss = train_loss_sum / static_cast<double>(trained);
        const double val_loss = run_validation(model, val_set, config.batch_size,
                                               frozen_fast_path ? &val_cache : nullptr);
        state.log.push_back({epoch, train_loss, val_loss, lr});
        csv << epoch << "," << train_loss << "," << val_loss << "," << lr << "\n";
        csv.flush();
        state.epochs_run = epoch;

        if (val_loss < state.best_val_loss - config.improvement_threshold) {
            state.best_val_loss = val_loss;
            state.best_epoch = epoch;
            save_checkpoint(model, schema, out_dir);
            state.best_checkpoint = out_dir;
            stall_epochs = 0;
            plateau_counter = 0;
        } else {
            ++stall_epochs;
            ++plateau_counter;
            if (stall_epochs >= config.early_stop_patience) break;
            if (plateau_counter >= config.plateau_patience) {
                lr *= config.plateau_factor;
                for (auto& group : optimizer.param_groups()) {
                    static_cast<torch::optim::AdamOptions&>(group.options()).lr(lr);
                }
                plateau_counter = 0;
            }
        }
    }

    // Leave the caller holding the lowest-validation-error weights.
    if (!state.best_checkpoint.empty()) {
        HeatmapNet best = load_checkpoint(state.best_checkpoint);
        torch::NoGradGuard no_grad;
        auto dst = model->named_parameters();
        for (const auto& src : best->named_parameters()) dst[src.key()].copy_(src.value());
        auto dst_buffers = model->named_buffers();
        for (const auto& src : best->named_buffers()) dst_buffers[src.key()].copy_(src.value());
    }
    model->eval();
    return state;
}

}  // namespace kpforge
