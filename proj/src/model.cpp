#include "kpforge/model.hpp"

#include <fstream>
#include <sstream>
#include <unordered_map>

#include <json.hpp>
#include <torch/script.h>

namespace kpforge {

using nlohmann::json;

// ---------------------------------------------------------------------------
// ModelConfig

void ModelConfig::validate() const {
    if (input_size < 32 || input_size % 32 != 0)
        throw ConfigError("model: input_size must be a positive multiple of 32 (backbone stride)");
    if (num_upsample_levels < 1 || num_upsample_levels > 5)
        throw ConfigError("model: num_upsample_levels must be in [1, 5]");
    if (base_filters < (1 << num_upsample_levels) ||
        (base_filters & (base_filters - 1)) != 0)
        throw ConfigError("model: base_filters must be a power of two >= 2^levels");
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0))
        throw ConfigError("model: dropout_rate must be in [0, 1)");
    if (num_channels < 1) throw ConfigError("model: num_channels must be >= 1");
}

std::vector<int> ModelConfig::head_sizes() const {
    std::vector<int> sizes;
    for (int k = 0; k < num_upsample_levels; ++k) {
        sizes.push_back(input_size / 16 * (1 << k));
    }
    if (!intermediate_supervision) return {sizes.back()};
    return sizes;
}

std::vector<int> ModelConfig::filter_schedule() const {
    std::vector<int> filters;
    for (int k = 0; k < num_upsample_levels; ++k) filters.push_back(base_filters >> k);
    return filters;
}

ModelConfig ModelConfig::variant(const std::string& name, int num_channels, int input_size) {
    ModelConfig config;
    config.input_size = input_size;
    config.num_channels = num_channels;
    if (name == "ihm224") {
        config.num_upsample_levels = 5;
        config.intermediate_supervision = true;
    } else if (name == "ihm56") {
        config.num_upsample_levels = 3;
        config.intermediate_supervision = true;
    } else if (name == "hm") {
        config.num_upsample_levels = 5;
        config.intermediate_supervision = false;
    } else {
        throw ConfigError("unknown model variant '" + name + "' (expected ihm224|ihm56|hm)");
    }
    config.validate();
    return config;
}

std::string ModelConfig::to_json_text() const {
    json j;
    j["input_size"] = input_size;
    j["num_upsample_levels"] = num_upsample_levels;
    j["base_filters"] = base_filters;
    j["dropout_rate"] = dropout_rate;
    j["num_channels"] = num_channels;
    j["intermediate_supervision"] = intermediate_supervision;
    j["backbone_frozen"] = backbone_frozen;
    return j.dump(2);
}

ModelConfig ModelConfig::from_json_text(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ParseError(std::string("model config: ") + e.what());
    }
    ModelConfig config;
    try {
        config.input_size = j.at("input_size").get<int>();
        config.num_upsample_levels = j.at("num_upsample_levels").get<int>();
        config.base_filters = j.at("base_filters").get<int>();
        config.dropout_rate = j.at("dropout_rate").get<double>();
        config.num_channels = j.at("num_channels").get<int>();
        config.intermediate_supervision = j.at("intermediate_supervision").get<bool>();
        config.backbone_frozen = j.at("backbone_frozen").get<bool>();
    } catch (const json::exception& e) {
        throw ParseError(std::string("model config: ") + e.what());
    }
    config.validate();
    return config;
}

// ---------------------------------------------------------------------------
// ResNet50 backbone

BottleneckImpl::BottleneckImpl(int in_channels, int planes, int stride, bool downsample) {
    namespace nn = torch::nn;
    conv1 = register_module(
        "conv1", nn::Conv2d(nn::Conv2dOptions(in_channels, planes, 1).bias(false)));
    bn1 = register_module("bn1", nn::BatchNorm2d(planes));
    conv2 = register_module(
        "conv2",
        nn::Conv2d(nn::Conv2dOptions(planes, planes, 3).stride(stride).padding(1).bias(false)));
    bn2 = register_module("bn2", nn::BatchNorm2d(planes));
    conv3 = register_module(
        "conv3", nn::Conv2d(nn::Conv2dOptions(planes, planes * 4, 1).bias(false)));
    bn3 = register_module("bn3", nn::BatchNorm2d(planes * 4));
    if (downsample) {
        downsample_ = register_module(
            "downsample",
            nn::Sequential(
                nn::Conv2d(nn::Conv2dOptions(in_channels, planes * 4, 1).stride(stride).bias(false)),
                nn::BatchNorm2d(planes * 4)));
    }
}

torch::Tensor BottleneckImpl::forward(torch::Tensor x) {
    torch::Tensor identity = downsample_ ? downsample_->forward(x) : x;
    x = torch::relu(bn1(conv1(x)));
    x = torch::relu(bn2(conv2(x)));
    x = bn3(conv3(x));
    return torch::relu(x + identity);
}

ResNet50BackboneImpl::ResNet50BackboneImpl() {
    namespace nn = torch::nn;
    conv1 = register_module(
        "conv1", nn::Conv2d(nn::Conv2dOptions(3, 64, 7).stride(2).padding(3).bias(false)));
    bn1 = register_module("bn1", nn::BatchNorm2d(64));
    layer1 = register_module("layer1", make_stage(64, 3, 1));
    layer2 = register_module("layer2", make_stage(128, 4, 2));
    layer3 = register_module("layer3", make_stage(256, 6, 2));
    layer4 = register_module("layer4", make_stage(512, 3, 2));
}

torch::nn::Sequential ResNet50BackboneImpl::make_stage(int planes, int blocks, int stride) {
    torch::nn::Sequential stage;
    stage->push_back(Bottleneck(in_channels_, planes, stride, /*downsample=*/true));
    in_channels_ = planes * 4;
    for (int i = 1; i < blocks; ++i) {
        stage->push_back(Bottleneck(in_channels_, planes, 1, /*downsample=*/false));
    }
    return stage;
}

BackbonePyramid ResNet50BackboneImpl::forward(torch::Tensor x) {
    BackbonePyramid pyramid;
    x = torch::relu(bn1(conv1(x)));
    pyramid.s2 = x;
    x = torch::max_pool2d(x, 3, 2, 1);
    pyramid.s4 = layer1->forward(x);
    pyramid.s8 = layer2->forward(pyramid.s4);
    pyramid.s16 = layer3->forward(pyramid.s8);
    pyramid.s32 = layer4->forward(pyramid.s16);
    return pyramid;
}

// ---------------------------------------------------------------------------
// Upsampling chain

UpsampleBlockImpl::UpsampleBlockImpl(int in_channels, int skip_channels, int filters,
                                     double dropout)
    : filters_(filters) {
    namespace nn = torch::nn;
    const int merged = in_channels + skip_channels;
    conv1 = register_module("conv1",
                            nn::Conv2d(nn::Conv2dOptions(merged, filters, 3).padding(1)));
    bn1 = register_module("bn1", nn::BatchNorm2d(filters));
    drop1 = register_module("drop1", nn::Dropout(dropout));
    conv2 = register_module("conv2",
                            nn::Conv2d(nn::Conv2dOptions(filters, filters, 3).padding(1)));
    bn2 = register_module("bn2", nn::BatchNorm2d(filters));
    drop2 = register_module("drop2", nn::Dropout(dropout));
}

torch::Tensor UpsampleBlockImpl::forward(torch::Tensor x, const torch::Tensor& skip) {
    namespace F = torch::nn::functional;
    x = F::interpolate(x, F::InterpolateFuncOptions()
                              .scale_factor(std::vector<double>{2.0, 2.0})
                              .mode(torch::kNearest));
    if (skip.defined()) {
        if (skip.size(2) != x.size(2) || skip.size(3) != x.size(3))
            throw ValidationError("upsample block: skip size does not match the doubled map");
        x = torch::cat({x, skip}, 1);
    }
    x = drop1(torch::leaky_relu(bn1(conv1(x)), 0.01));
    x = drop2(torch::leaky_relu(bn2(conv2(x)), 0.01));
    return x;
}

// ---------------------------------------------------------------------------
// HeatmapNet

namespace {

/// Backbone channel widths of the skip activation a block concatenates
/// (block k upsamples to stride 16/2^k; stride 1 has no backbone map).
constexpr std::array<int, 5> kSkipChannels = {1024, 512, 256, 64, 0};

}  // namespace

HeatmapNetImpl::HeatmapNetImpl(const ModelConfig& config) : config_(config) {
    config_.validate();
    backbone_ = register_module("backbone", ResNet50Backbone());

    const auto filters = config_.filter_schedule();
    int in_channels = 2048;
    for (int k = 0; k < config_.num_upsample_levels; ++k) {
        auto block = UpsampleBlock(in_channels, kSkipChannels[k], filters[k],
                                   config_.dropout_rate);
        blocks_.push_back(register_module("block" + std::to_string(k), block));
        in_channels = filters[k];

        const bool is_last = k == config_.num_upsample_levels - 1;
        if (config_.intermediate_supervision || is_last) {
            auto head = torch::nn::Conv2d(
                torch::nn::Conv2dOptions(filters[k], config_.num_channels, 1).bias(true));
            heads_.push_back(register_module("head" + std::to_string(k), head));
        }
    }
}

std::vector<torch::Tensor> HeatmapNetImpl::forward(torch::Tensor images) {
    return forward_features(extract_features(images));
}

BackbonePyramid HeatmapNetImpl::extract_features(torch::Tensor images) {
    if (images.dim() != 4 || images.size(1) != 3 || images.size(2) != config_.input_size ||
        images.size(3) != config_.input_size)
        throw ValidationError("forward: expected (N,3," + std::to_string(config_.input_size) +
                              "," + std::to_string(config_.input_size) + ") input");
    if (config_.backbone_frozen) {
        torch::NoGradGuard no_grad;
        return backbone_->forward(images);
    }
    return backbone_->forward(images);
}

std::vector<torch::Tensor> HeatmapNetImpl::forward_features(const BackbonePyramid& feats) {
    const std::array<torch::Tensor, 5> skips = {feats.s16, feats.s8, feats.s4, feats.s2,
                                                torch::Tensor()};
    std::vector<torch::Tensor> outputs;
    torch::Tensor x = feats.s32;
    std::size_t head_index = 0;
    for (int k = 0; k < config_.num_upsample_levels; ++k) {
        x = blocks_[k]->forward(x, skips[k]);
        const bool is_last = k == config_.num_upsample_levels - 1;
        if (config_.intermediate_supervision || is_last) {
            outputs.push_back(torch::sigmoid(heads_[head_index++]->forward(x)));
        }
    }
    return outputs;
}

void HeatmapNetImpl::train(bool on) {
    torch::nn::Module::train(on);
    if (config_.backbone_frozen) backbone_->eval();
}

std::uint64_t HeatmapNetImpl::backbone_checksum() const {
    std::uint64_t hash = 0xcbf29ce484222325ull;  // FNV-1a
    auto digest = [&hash](const std::string& name, const torch::Tensor& t) {
        for (char c : name) {
            hash = (hash ^ static_cast<std::uint8_t>(c)) * 0x100000001b3ull;
        }
        const torch::Tensor flat = t.detach().cpu().contiguous();
        const auto* bytes = static_cast<const std::uint8_t*>(flat.data_ptr());
        const std::size_t n = flat.numel() * flat.element_size();
        for (std::size_t i = 0; i < n; ++i) {
            hash = (hash ^ bytes[i]) * 0x100000001b3ull;
        }
    };
    for (const auto& p : backbone_->named_parameters()) digest(p.key(), p.value());
    for (const auto& b : backbone_->named_buffers()) digest(b.key(), b.value());
    return hash;
}

std::vector<torch::Tensor> HeatmapNetImpl::trainable_parameters() const {
    std::vector<torch::Tensor> params;
    for (const auto& p : parameters()) {
        if (p.requires_grad()) params.push_back(p);
    }
    return params;
}

// ---------------------------------------------------------------------------
// Build / checkpoint IO

HeatmapNet build_model(const ModelConfig& config, const BuildOptions& options) {
    config.validate();
    torch::manual_seed(options.seed);
    HeatmapNet model(config);
    if (options.pretrained_backbone.has_value()) {
        load_backbone_weights(model, *options.pretrained_backbone);
    } else if (!options.allow_random_backbone) {
        throw Error(
            "build_model: pretrained backbone weights are required (export them with "
            "tools/export_backbone.py, or pass allow_random_backbone for tests)");
    }
    if (config.backbone_frozen) {
        for (auto& p : model->backbone()->parameters()) p.set_requires_grad(false);
    }
    model->train(false);
    return model;
}

void load_backbone_weights(HeatmapNet& model, const std::filesystem::path& path) {
    if (!std::filesystem::exists(path))
        throw IoError("backbone weights not found: " + path.string());
    torch::jit::Module container;
    try {
        container = torch::jit::load(path.string());
    } catch (const c10::Error& e) {
        throw IoError("cannot load backbone weights " + path.string() + ": " + e.what_without_backtrace());
    }

    std::unordered_map<std::string, torch::Tensor> exported;
    for (const auto& buffer : container.named_buffers()) {
        std::string name = buffer.name;
        // register_buffer forbids dots; the exporter writes "__" instead.
        std::size_t pos = 0;
        while ((pos = name.find("__", pos)) != std::string::npos) {
            name.replace(pos, 2, ".");
            pos += 1;
        }
        exported[name] = buffer.value;
    }
    if (exported.empty()) throw IoError("backbone weights file has no tensors: " + path.string());

    torch::NoGradGuard no_grad;
    std::size_t copied = 0;
    auto copy_all = [&](auto named) {
        for (auto& item : named) {
            auto it = exported.find(item.key());
            if (it == exported.end())
                throw Error("backbone weights: missing tensor '" + item.key() + "'");
            if (item.value().sizes() != it->second.sizes())
                throw Error("backbone weights: shape mismatch for '" + item.key() + "'");
            item.value().copy_(it->second);
            ++copied;
        }
    };
    copy_all(model->backbone()->named_parameters());
    auto buffers = model->backbone()->named_buffers();
    for (auto& item : buffers) {
        auto it = exported.find(item.key());
        // num_batches_tracked counters are optional in exports.
        if (it == exported.end()) continue;
        if (item.value().sizes() != it->second.sizes())
            throw Error("backbone weights: shape mismatch for '" + item.key() + "'");
        item.value().copy_(it->second);
        ++copied;
    }
    if (copied == 0) throw Error("backbone weights: nothing matched the backbone layout");
}

void save_checkpoint(const HeatmapNet& model, const KeypointSchema& schema,
                     const std::filesystem::path& dir) {
    schema.validate();
    std::filesystem::create_directories(dir);
    {
        std::ofstream out(dir / "config.json");
        if (!out) throw IoError("cannot write " + (dir / "config.json").string());
        out << model->config().to_json_text() << "\n";
    }
    schema.save(dir / "schema.json");
    torch::serialize::OutputArchive archive;
    model->save(archive);
    archive.save_to((dir / "weights.pt").string());
}

HeatmapNet load_checkpoint(const std::filesystem::path& dir, KeypointSchema* schema_out) {
    const auto config_path = dir / "config.json";
    const auto weights_path = dir / "weights.pt";
    const auto schema_path = dir / "schema.json";
    for (const auto& p : {config_path, weights_path, schema_path}) {
        if (!std::filesystem::exists(p)) throw IoError("checkpoint file missing: " + p.string());
    }

    std::ifstream in(config_path);
    std::stringstream buffer;
    buffer << in.rdbuf();
    const ModelConfig config = ModelConfig::from_json_text(buffer.str());

    KeypointSchema schema = KeypointSchema::load(schema_path);
    if (schema.num_channels() != config.num_channels)
        throw ValidationError("checkpoint: schema channel count " +
                              std::to_string(schema.num_channels()) +
                              " does not match config num_channels " +
                              std::to_string(config.num_channels));

    HeatmapNet model(config);
    torch::serialize::InputArchive archive;
    try {
        archive.load_from(weights_path.string());
        model->load(archive);
    } catch (const c10::Error& e) {
        throw Error("checkpoint: weights do not match the config (" +
                    std::string(e.what_without_backtrace()) + ")");
    }
    if (config.backbone_frozen) {
        for (auto& p : model->backbone()->parameters()) p.set_requires_grad(false);
    }
    model->train(false);
    if (schema_out != nullptr) *schema_out = schema;
    return model;
}

// ---------------------------------------------------------------------------
// Tensor conversions

torch::Tensor to_input_tensor(const cv::Mat& rgb) {
    if (rgb.empty() || rgb.type() != CV_32FC3)
        throw ValidationError("to_input_tensor: expected CV_32FC3 RGB image");
    cv::Mat cont = rgb.isContinuous() ? rgb : rgb.clone();
    torch::Tensor t =
        torch::from_blob(cont.ptr<float>(), {cont.rows, cont.cols, 3}, torch::kFloat32).clone();
    t = t.permute({2, 0, 1}).unsqueeze(0).div(255.0);
    for (int c = 0; c < 3; ++c) {
        t.select(1, c).sub_(kImageNetMean[c]).div_(kImageNetStd[c]);
    }
    return t;
}

HeatmapStack to_heatmap_stack(const torch::Tensor& prediction, const KeypointSchema& schema) {
    if (prediction.dim() != 4 || prediction.size(0) != 1)
        throw ValidationError("to_heatmap_stack: expected a (1,N,h,w) tensor");
    const torch::Tensor t = prediction.detach().cpu().contiguous().to(torch::kFloat32);
    HeatmapStack stack;
    stack.channel_names = schema.channel_names();
    if (t.size(1) != static_cast<long>(stack.channel_names.size()))
        throw SchemaError("to_heatmap_stack: channel count does not match the schema");
    stack.height = static_cast<int>(t.size(2));
    stack.width = static_cast<int>(t.size(3));
    const float* data = t.data_ptr<float>();
    stack.values.assign(data, data + t.numel());
    return stack;
}

}  // namespace kpforge
