#include "kpforge/compositor.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>
#include <opencv2/imgproc.hpp>

#include "kpforge/blending.hpp"
#include "kpforge/image.hpp"

namespace kpforge {

using nlohmann::json;

std::string to_string(BlendMode mode) {
    switch (mode) {
        case BlendMode::kAlpha: return "alpha";
        case BlendMode::kPoisson: return "poisson";
        case BlendMode::kLaplacian: return "laplacian";
    }
    throw ValidationError("invalid BlendMode value");
}

BlendMode blend_mode_from_string(const std::string& text) {
    if (text == "alpha") return BlendMode::kAlpha;
    if (text == "poisson") return BlendMode::kPoisson;
    if (text == "laplacian") return BlendMode::kLaplacian;
    throw ValidationError("unknown blend mode '" + text + "'");
}

// ---------------------------------------------------------------------------
// ForegroundAsset

cv::Rect ForegroundAsset::mask_bbox() const {
    int x_min = alpha.cols, y_min = alpha.rows, x_max = -1, y_max = -1;
    for (int y = 0; y < alpha.rows; ++y) {
        const float* row = alpha.ptr<float>(y);
        for (int x = 0; x < alpha.cols; ++x) {
            if (row[x] >= 0.5f) {
                x_min = std::min(x_min, x);
                y_min = std::min(y_min, y);
                x_max = std::max(x_max, x);
                y_max = std::max(y_max, y);
            }
        }
    }
    if (x_max < 0) return {};
    return {x_min, y_min, x_max - x_min + 1, y_max - y_min + 1};
}

void ForegroundAsset::validate() const {
    if (rgb.empty() || rgb.type() != CV_32FC3)
        throw ValidationError("asset '" + tool_name + "': rgb must be CV_32FC3");
    if (alpha.empty() || alpha.type() != CV_32FC1 || alpha.size() != rgb.size())
        throw ValidationError("asset '" + tool_name + "': alpha must be CV_32FC1 of rgb size");
    const cv::Rect box = mask_bbox();
    if (box.empty()) throw ValidationError("asset '" + tool_name + "': empty mask");
    for (const auto& kp : keypoints) {
        if (kp.x < box.x || kp.x > box.x + box.width - 1 || kp.y < box.y ||
            kp.y > box.y + box.height - 1)
            throw ValidationError("asset '" + tool_name + "': keypoint '" + kp.name +
                                  "' outside the mask bounding box");
    }
}

ForegroundAsset ForegroundAsset::load(const std::filesystem::path& png_path) {
    ForegroundAsset asset;
    RgbaImage rgba = load_image_rgba(png_path);
    asset.rgb = rgba.rgb;
    asset.alpha = rgba.alpha;
    asset.tool_name = png_path.stem().string();

    std::filesystem::path sidecar = png_path;
    sidecar.replace_extension(".json");
    if (std::filesystem::exists(sidecar)) {
        std::ifstream in(sidecar);
        if (!in) throw IoError("cannot open asset sidecar: " + sidecar.string());
        json j;
        try {
            in >> j;
            if (j.contains("tool")) asset.tool_name = j.at("tool").get<std::string>();
            for (const auto& jk : j.at("keypoints")) {
                Keypoint kp;
                kp.name = jk.at("name").get<std::string>();
                kp.x = jk.at("x").get<double>();
                kp.y = jk.at("y").get<double>();
                kp.visible = true;
                asset.keypoints.push_back(std::move(kp));
            }
        } catch (const json::exception& e) {
            throw ParseError("asset sidecar " + sidecar.string() + ": " + e.what());
        }
    }
    asset.validate();
    return asset;
}

// ---------------------------------------------------------------------------
// CompositeSpec / AffineMap

void CompositeSpec::validate() const {
    if (!(scale > 0.0) || !std::isfinite(scale))
        throw ValidationError("composite spec: scale must be positive");
    if (!std::isfinite(rotation_deg) || !std::isfinite(tx) || !std::isfinite(ty))
        throw ValidationError("composite spec: non-finite transform");
}

void AffineMap::validate() const {
    if (std::abs(det()) < 1e-12)
        throw ValidationError("affine map: linear part is not invertible");
}

AffineMap AffineMap::inverse() const {
    validate();
    const double d = det();
    AffineMap inv;
    inv.m[0] = m[4] / d;
    inv.m[1] = -m[1] / d;
    inv.m[3] = -m[3] / d;
    inv.m[4] = m[0] / d;
    inv.m[2] = -(inv.m[0] * m[2] + inv.m[1] * m[5]);
    inv.m[5] = -(inv.m[3] * m[2] + inv.m[4] * m[5]);
    return inv;
}

cv::Mat AffineMap::to_cv() const {
    cv::Mat out(2, 3, CV_64FC1);
    out.at<double>(0, 0) = m[0];
    out.at<double>(0, 1) = m[1];
    out.at<double>(0, 2) = m[2];
    out.at<double>(1, 0) = m[3];
    out.at<double>(1, 1) = m[4];
    out.at<double>(1, 2) = m[5];
    return out;
}

AffineMap AffineMap::from_spec(const CompositeSpec& spec, const cv::Size& canvas) {
    spec.validate();
    const double cx = (canvas.width - 1) / 2.0;
    const double cy = (canvas.height - 1) / 2.0;
    const double theta = spec.rotation_deg * M_PI / 180.0;
    const double a = spec.scale * std::cos(theta);
    const double b = spec.scale * std::sin(theta);
    AffineMap map;
    // p' = R*S*(p - c) + c + t
    map.m[0] = a;
    map.m[1] = -b;
    map.m[2] = cx + spec.tx - (a * cx - b * cy);
    map.m[3] = b;
    map.m[4] = a;
    map.m[5] = cy + spec.ty - (b * cx + a * cy);
    map.validate();
    return map;
}

// ---------------------------------------------------------------------------
// compose_sample

namespace {

struct WarpedAsset {
    cv::Mat rgb;    // CV_32FC3, premultiplied bleed removed
    cv::Mat alpha;  // CV_32FC1
};

/// Premultiplied warp so transparent-pixel colors do not bleed into edges.
WarpedAsset warp_asset(const ForegroundAsset& asset, const AffineMap& map,
                       const cv::Size& canvas) {
    cv::Mat premult(asset.rgb.size(), CV_32FC3);
    for (int y = 0; y < asset.rgb.rows; ++y) {
        const float* rgb = asset.rgb.ptr<float>(y);
        const float* a = asset.alpha.ptr<float>(y);
        float* dst = premult.ptr<float>(y);
        for (int x = 0; x < asset.rgb.cols; ++x) {
            for (int ch = 0; ch < 3; ++ch) dst[x * 3 + ch] = rgb[x * 3 + ch] * a[x];
        }
    }
    WarpedAsset out;
    const cv::Mat warp = map.to_cv();
    cv::warpAffine(premult, out.rgb, warp, canvas, cv::INTER_LINEAR, cv::BORDER_CONSTANT,
                   cv::Scalar(0, 0, 0));
    cv::warpAffine(asset.alpha, out.alpha, warp, canvas, cv::INTER_LINEAR, cv::BORDER_CONSTANT,
                   cv::Scalar(0));
    for (int y = 0; y < out.rgb.rows; ++y) {
        float* rgb = out.rgb.ptr<float>(y);
        float* a = out.alpha.ptr<float>(y);
        for (int x = 0; x < out.rgb.cols; ++x) {
            a[x] = std::clamp(a[x], 0.0f, 1.0f);
            if (a[x] > 1e-4f) {
                for (int ch = 0; ch < 3; ++ch) rgb[x * 3 + ch] /= a[x];
            }
        }
    }
    return out;
}

cv::Mat binary_poisson_mask(const cv::Mat& soft_alpha) {
    cv::Mat binary(soft_alpha.size(), CV_8UC1);
    for (int y = 0; y < soft_alpha.rows; ++y) {
        const float* a = soft_alpha.ptr<float>(y);
        auto* b = binary.ptr<std::uint8_t>(y);
        for (int x = 0; x < soft_alpha.cols; ++x) b[x] = a[x] >= 0.5f ? 255 : 0;
    }
    // 1 px erosion guarantees a Dirichlet ring of valid foreground
    // neighbors around every interior pixel.
    cv::erode(binary, binary, cv::getStructuringElement(cv::MORPH_RECT, {3, 3}));
    binary.row(0).setTo(0);
    binary.row(binary.rows - 1).setTo(0);
    binary.col(0).setTo(0);
    binary.col(binary.cols - 1).setTo(0);
    return binary;
}

cv::Mat blend_by_mode(const cv::Mat& fg, const cv::Mat& soft_alpha, const cv::Mat& bg,
                      BlendMode mode) {
    switch (mode) {
        case BlendMode::kAlpha:
            return alpha_blend(fg, soft_alpha, bg);
        case BlendMode::kPoisson: {
            const cv::Mat binary = binary_poisson_mask(soft_alpha);
            if (cv::countNonZero(binary) == 0) return alpha_blend(fg, soft_alpha, bg);
            return poisson_blend(fg, binary, bg);
        }
        case BlendMode::kLaplacian:
            return laplacian_blend(fg, soft_alpha, bg, 4);
    }
    throw ValidationError("invalid BlendMode value");
}

std::optional<BBox> mask_box(const cv::Mat& soft_alpha) {
    int x_min = soft_alpha.cols, y_min = soft_alpha.rows, x_max = -1, y_max = -1;
    for (int y = 0; y < soft_alpha.rows; ++y) {
        const float* a = soft_alpha.ptr<float>(y);
        for (int x = 0; x < soft_alpha.cols; ++x) {
            if (a[x] >= 0.5f) {
                x_min = std::min(x_min, x);
                y_min = std::min(y_min, y);
                x_max = std::max(x_max, x);
                y_max = std::max(y_max, y);
            }
        }
    }
    if (x_max < 0) return std::nullopt;
    return BBox{static_cast<double>(x_min), static_cast<double>(y_min),
                static_cast<double>(x_max + 1), static_cast<double>(y_max + 1)};
}

}  // namespace

std::optional<ComposedSample> compose_sample(const ForegroundAsset& asset,
                                             const cv::Mat& background,
                                             const CompositeSpec& spec) {
    asset.validate();
    spec.validate();
    if (background.empty() || background.type() != CV_32FC3)
        throw ValidationError("compose_sample: background must be CV_32FC3");

    const cv::Size canvas = background.size();
    const AffineMap map = AffineMap::from_spec(spec, canvas);

    std::vector<Keypoint> transported;
    int on_canvas = 0;
    for (const auto& kp : asset.keypoints) {
        const cv::Point2d p = map.apply({kp.x, kp.y});
        Keypoint out{kp.name, p.x, p.y, true};
        out.visible =
            p.x >= 0.0 && p.x < canvas.width && p.y >= 0.0 && p.y < canvas.height;
        if (out.visible) ++on_canvas;
        transported.push_back(std::move(out));
    }
    if (on_canvas == 0) return std::nullopt;  // caller resamples the spec

    const WarpedAsset warped = warp_asset(asset, map, canvas);
    const auto box = mask_box(warped.alpha);
    if (!box.has_value()) return std::nullopt;

    ComposedSample sample;
    sample.image = blend_by_mode(warped.rgb, warped.alpha, background, spec.blend_mode);
    sample.foreground_mask = warped.alpha;
    sample.annotation.image_path = "";  // caller fills on write
    sample.annotation.width = canvas.width;
    sample.annotation.height = canvas.height;
    sample.annotation.bbox = *box;
    sample.annotation.keypoints = std::move(transported);
    sample.annotation.tool_name = asset.tool_name;
    sample.annotation.source = SampleSource::kComposite2d;
    return sample;
}

// ---------------------------------------------------------------------------
// Occlusion / background-swap variants

namespace {

/// Distractors carry no keypoints; place the mask center uniformly.
CompositeSpec sample_distractor_spec(const ForegroundAsset& distractor, const cv::Size& canvas,
                                     Rng& rng) {
    CompositeSpec spec;
    spec.rotation_deg = rng.uniform(0.0, 360.0);
    const cv::Rect box = distractor.mask_bbox();
    const double long_side = std::max(box.width, box.height);
    spec.scale = rng.uniform(0.2, 0.7) * canvas.width / std::max(1.0, long_side);
    spec.blend_mode = static_cast<BlendMode>(rng.index(3));
    spec.seed = rng.next();

    const cv::Point2d center(box.x + (box.width - 1) / 2.0, box.y + (box.height - 1) / 2.0);
    const cv::Point2d target(rng.uniform(0.0, canvas.width), rng.uniform(0.0, canvas.height));
    AffineMap no_shift = AffineMap::from_spec(spec, canvas);
    const cv::Point2d landed = no_shift.apply(center);
    spec.tx = target.x - landed.x;
    spec.ty = target.y - landed.y;
    return spec;
}

}  // namespace

ComposedSample augment_with_distractors(const ComposedSample& sample,
                                        const std::vector<ForegroundAsset>& distractor_pool,
                                        const std::vector<cv::Mat>& background_pool,
                                        std::uint64_t seed) {
    if (distractor_pool.empty() || background_pool.empty())
        throw ValidationError("augment_with_distractors: empty pool");

    Rng rng(seed);
    ComposedSample out;
    out.annotation = sample.annotation;
    out.foreground_mask = sample.foreground_mask;
    const cv::Size canvas = sample.image.size();

    if (rng.uniform() < 0.5) {
        // Distractor pasted in front; covered keypoints become invisible.
        const ForegroundAsset& distractor = distractor_pool[rng.index(distractor_pool.size())];
        const CompositeSpec spec = sample_distractor_spec(distractor, canvas, rng);
        const AffineMap map = AffineMap::from_spec(spec, canvas);
        const WarpedAsset warped = warp_asset(distractor, map, canvas);
        out.image = blend_by_mode(warped.rgb, warped.alpha, sample.image, spec.blend_mode);
        for (auto& kp : out.annotation.keypoints) {
            const auto px = static_cast<int>(std::lround(kp.x));
            const auto py = static_cast<int>(std::lround(kp.y));
            if (px >= 0 && px < canvas.width && py >= 0 && py < canvas.height &&
                warped.alpha.at<float>(py, px) > 0.5f) {
                kp.visible = false;
            }
        }
    } else {
        if (sample.foreground_mask.empty())
            throw ValidationError(
                "augment_with_distractors: background swap requested without a stored mask");
        const cv::Mat& bg = background_pool[rng.index(background_pool.size())];
        if (bg.size() != canvas || bg.type() != CV_32FC3)
            throw ValidationError("augment_with_distractors: background pool size mismatch");
        const auto mode = static_cast<BlendMode>(rng.index(3));
        out.image = blend_by_mode(sample.image, sample.foreground_mask, bg, mode);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Pose sampling + dataset driver

CompositeSpec sample_spec(const ForegroundAsset& asset, const cv::Size& canvas, Rng& rng) {
    CompositeSpec spec;
    spec.rotation_deg = rng.uniform(0.0, 360.0);
    const cv::Rect box = asset.mask_bbox();
    const double long_side = std::max(box.width, box.height);
    spec.scale = rng.uniform(0.3, 1.0) * canvas.width / std::max(1.0, long_side);
    spec.blend_mode = static_cast<BlendMode>(rng.index(3));
    spec.seed = rng.next();

    // Pin a random keypoint to a uniform canvas position so at least one
    // keypoint always stays on-canvas.
    const Keypoint& anchor = asset.keypoints[rng.index(asset.keypoints.size())];
    const cv::Point2d target(rng.uniform(0.0, canvas.width), rng.uniform(0.0, canvas.height));
    AffineMap no_shift = AffineMap::from_spec(spec, canvas);
    const cv::Point2d landed = no_shift.apply({anchor.x, anchor.y});
    spec.tx = target.x - landed.x;
    spec.ty = target.y - landed.y;
    return spec;
}

namespace {

std::vector<std::filesystem::path> list_files(const std::filesystem::path& dir,
                                              const std::set<std::string>& extensions) {
    if (!std::filesystem::is_directory(dir))
        throw IoError("not a directory: " + dir.string());
    std::vector<std::filesystem::path> files;
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        if (!entry.is_regular_file()) continue;
        std::string ext = entry.path().extension().string();
        std::transform(ext.begin(), ext.end(), ext.begin(), ::tolower);
        if (extensions.count(ext)) files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    return files;
}

cv::Mat prepare_background(const cv::Mat& raw, int canvas, Rng& rng) {
    // Cover-resize then a random crop.
    const double scale =
        std::max(static_cast<double>(canvas) / raw.cols, static_cast<double>(canvas) / raw.rows);
    cv::Mat resized;
    cv::resize(raw, resized,
               {std::max(canvas, static_cast<int>(std::ceil(raw.cols * scale))),
                std::max(canvas, static_cast<int>(std::ceil(raw.rows * scale)))},
               0, 0, cv::INTER_LINEAR);
    const int max_x = resized.cols - canvas;
    const int max_y = resized.rows - canvas;
    const int x0 = max_x > 0 ? static_cast<int>(rng.index(max_x + 1)) : 0;
    const int y0 = max_y > 0 ? static_cast<int>(rng.index(max_y + 1)) : 0;
    return resized(cv::Rect(x0, y0, canvas, canvas)).clone();
}

std::string sample_filename(std::size_t index) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "img_%06zu.png", index);
    return buf;
}

KeypointSchema derive_schema(const std::vector<ForegroundAsset>& assets) {
    KeypointSchema schema;
    schema.tool_name = assets.front().tool_name;
    for (const auto& asset : assets) {
        for (const auto& kp : asset.keypoints) {
            if (std::find(schema.keypoint_names.begin(), schema.keypoint_names.end(), kp.name) ==
                schema.keypoint_names.end())
                schema.keypoint_names.push_back(kp.name);
        }
    }
    schema.validate();
    return schema;
}

}  // namespace

DatasetManifest generate_dataset(const GenerateOptions& options) {
    if (options.count <= 0) throw ConfigError("generate: count must be positive");
    if (options.canvas < 32) throw ConfigError("generate: canvas too small");

    static const std::set<std::string> kImageExt = {".png", ".jpg", ".jpeg", ".bmp"};
    std::vector<ForegroundAsset> assets;
    for (const auto& path : list_files(options.assets_dir, {".png"}))
        assets.push_back(ForegroundAsset::load(path));
    if (assets.empty()) throw IoError("generate: no assets in " + options.assets_dir.string());
    for (const auto& asset : assets) {
        if (asset.keypoints.empty())
            throw ValidationError("generate: asset '" + asset.tool_name + "' has no keypoints");
        if (asset.tool_name != assets.front().tool_name)
            throw ValidationError("generate: assets mix tools ('" + asset.tool_name + "' vs '" +
                                  assets.front().tool_name + "')");
    }

    std::vector<cv::Mat> backgrounds;
    for (const auto& path : list_files(options.backgrounds_dir, kImageExt))
        backgrounds.push_back(load_image_rgb(path));
    if (backgrounds.empty())
        throw IoError("generate: no backgrounds in " + options.backgrounds_dir.string());

    std::vector<ForegroundAsset> distractors;
    if (!options.distractors_dir.empty()) {
        for (const auto& path : list_files(options.distractors_dir, {".png"}))
            distractors.push_back(ForegroundAsset::load(path));
        if (distractors.empty())
            throw IoError("generate: no distractors in " + options.distractors_dir.string());
    }

    KeypointSchema schema = options.schema_path.empty() ? derive_schema(assets)
                                                        : KeypointSchema::load(options.schema_path);
    for (const auto& asset : assets) {
        for (const auto& kp : asset.keypoints) {
            if (!schema.has_keypoint(kp.name))
                throw SchemaError("generate: asset keypoint '" + kp.name +
                                  "' missing from the schema");
        }
    }

    std::filesystem::create_directories(options.out_dir);

    DatasetManifest manifest;
    manifest.root = options.out_dir;
    manifest.schema = schema;

    // Variant backgrounds are prepared deterministically (center crop) so the
    // swap pool does not depend on per-sample RNG state.
    std::vector<cv::Mat> swap_pool;
    if (!distractors.empty()) {
        for (const auto& bg : backgrounds) {
            Rng fixed(0);
            swap_pool.push_back(prepare_background(bg, options.canvas, fixed));
        }
    }

    const auto total = static_cast<std::size_t>(options.count);
    for (std::size_t i = 0; i < total; ++i) {
        Rng rng = Rng::stream(options.seed, i);
        std::optional<ComposedSample> sample;
        for (int attempt = 0; attempt < 100 && !sample.has_value(); ++attempt) {
            const ForegroundAsset& asset = assets[rng.index(assets.size())];
            const cv::Mat background =
                prepare_background(backgrounds[rng.index(backgrounds.size())], options.canvas, rng);
            const CompositeSpec spec = sample_spec(asset, {options.canvas, options.canvas}, rng);
            sample = compose_sample(asset, background, spec);
        }
        if (!sample.has_value())
            throw Error("generate: could not place sample " + std::to_string(i) +
                        " after 100 attempts");

        sample->annotation.image_path = sample_filename(i);
        save_image_png(sample->image, options.out_dir / sample->annotation.image_path);
        manifest.samples.push_back(sample->annotation);

        if (!distractors.empty()) {
            ComposedSample variant = augment_with_distractors(
                *sample, distractors, swap_pool, Rng::stream(options.seed, total + i).next());
            variant.annotation.image_path = sample_filename(total + i);
            save_image_png(variant.image, options.out_dir / variant.annotation.image_path);
            manifest.samples.push_back(variant.annotation);
        }
    }

    save_manifest(manifest, options.out_dir / "manifest.jsonl");
    schema.save(options.out_dir / "schema.json");
    return manifest;
}

}  // namespace kpforge
