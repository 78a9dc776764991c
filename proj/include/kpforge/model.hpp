#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <torch/torch.h>
#include <opencv2/core.hpp>

#include "kpforge/dataset.hpp"
#include "kpforge/heatmap.hpp"

namespace kpforge {

/// Architecture knobs. The full model upsamples the backbone's stride-32
/// feature map num_upsample_levels times (5 reaches the input resolution),
/// emitting an N-channel sigmoid head after every block when
/// intermediate_supervision is on, or only after the last one otherwise.
struct ModelConfig {
    int input_size = 224;
    int num_upsample_levels = 5;
    int base_filters = 256;
    double dropout_rate = 0.2;
    int num_channels = 1;
    bool intermediate_supervision = true;
    bool backbone_frozen = true;

    void validate() const;

    /// Spatial sizes of the emitted heads, smallest first:
    /// input_size/16 * 2^k (only the final one without intermediate
    /// supervision).
    std::vector<int> head_sizes() const;

    /// Filters per upsampling block: base_filters halved at every step.
    std::vector<int> filter_schedule() const;

    /// "ihm224" (5 levels), "ihm56" (3 levels) or "hm" (5 levels, final
    /// head only).
    static ModelConfig variant(const std::string& name, int num_channels, int input_size = 224);

    std::string to_json_text() const;
    static ModelConfig from_json_text(const std::string& text);
};

/// ImageNet channel statistics the backbone was pretrained with.
inline constexpr std::array<double, 3> kImageNetMean = {0.485, 0.456, 0.406};
inline constexpr std::array<double, 3> kImageNetStd = {0.229, 0.224, 0.225};

/// Backbone activations by stride relative to the input. For a 224 input:
/// s2 (112,112,64) ... s32 (7,7,2048).
struct BackbonePyramid {
    torch::Tensor s2, s4, s8, s16, s32;
};

class BottleneckImpl : public torch::nn::Module {
 public:
    BottleneckImpl(int in_channels, int planes, int stride, bool downsample);
    torch::Tensor forward(torch::Tensor x);

 private:
    torch::nn::Conv2d conv1{nullptr}, conv2{nullptr}, conv3{nullptr};
    torch::nn::BatchNorm2d bn1{nullptr}, bn2{nullptr}, bn3{nullptr};
    torch::nn::Sequential downsample_{nullptr};
};
TORCH_MODULE(Bottleneck);

/// ResNet50 trunk (classifier head omitted). Submodule names follow the
/// torchvision state_dict layout so pretrained weights map one-to-one.
class ResNet50BackboneImpl : public torch::nn::Module {
 public:
    ResNet50BackboneImpl();
    BackbonePyramid forward(torch::Tensor x);

 private:
    torch::nn::Sequential make_stage(int planes, int blocks, int stride);

    torch::nn::Conv2d conv1{nullptr};
    torch::nn::BatchNorm2d bn1{nullptr};
    torch::nn::Sequential layer1{nullptr}, layer2{nullptr}, layer3{nullptr}, layer4{nullptr};
    int in_channels_ = 64;
};
TORCH_MODULE(ResNet50Backbone);

/// Nearest-neighbour x2 upsample, optional skip concatenation, then two
/// conv3x3 + BatchNorm + LeakyReLU + Dropout blocks.
class UpsampleBlockImpl : public torch::nn::Module {
 public:
    UpsampleBlockImpl(int in_channels, int skip_channels, int filters, double dropout);
    torch::Tensor forward(torch::Tensor x, const torch::Tensor& skip);

    int out_channels() const { return filters_; }

 private:
    torch::nn::Conv2d conv1{nullptr}, conv2{nullptr};
    torch::nn::BatchNorm2d bn1{nullptr}, bn2{nullptr};
    torch::nn::Dropout drop1{nullptr}, drop2{nullptr};
    int filters_ = 0;
};
TORCH_MODULE(UpsampleBlock);

class HeatmapNetImpl : public torch::nn::Module {
 public:
    explicit HeatmapNetImpl(const ModelConfig& config);

    /// Head outputs smallest first, values in (0, 1). Input must be an
    /// ImageNet-normalized NCHW float batch at input_size.
    std::vector<torch::Tensor> forward(torch::Tensor images);

    /// Backbone stage (no gradients when frozen). Split out so training can
    /// cache features of a frozen backbone.
    BackbonePyramid extract_features(torch::Tensor images);

    /// Upsampling chain + heads on precomputed backbone activations.
    std::vector<torch::Tensor> forward_features(const BackbonePyramid& features);

    /// Keeps the frozen backbone in inference mode regardless of the
    /// training flag (its BatchNorm statistics must not drift).
    void train(bool on = true) override;

    const ModelConfig& config() const { return config_; }
    ResNet50Backbone& backbone() { return backbone_; }

    /// Bit-exact digest of every backbone parameter and buffer.
    std::uint64_t backbone_checksum() const;

    std::vector<torch::Tensor> trainable_parameters() const;

 private:
    ModelConfig config_;
    ResNet50Backbone backbone_{nullptr};
    std::vector<UpsampleBlock> blocks_;
    std::vector<torch::nn::Conv2d> heads_;
};
TORCH_MODULE(HeatmapNet);

struct BuildOptions {
    /// TorchScript container produced by tools/export_backbone.py.
    std::optional<std::filesystem::path> pretrained_backbone;
    /// Tests only: accept a randomly initialized backbone.
    bool allow_random_backbone = false;
    std::uint64_t seed = 0;
};

/// Builds the network, loads pretrained backbone weights and freezes them.
/// Refuses to run without pretrained weights unless explicitly overridden.
HeatmapNet build_model(const ModelConfig& config, const BuildOptions& options);

/// Copies torchvision-layout weights (exported as a TorchScript buffer
/// container) into the backbone by name.
void load_backbone_weights(HeatmapNet& model, const std::filesystem::path& path);

/// Checkpoint directory: weights.pt + config.json + schema.json.
void save_checkpoint(const HeatmapNet& model, const KeypointSchema& schema,
                     const std::filesystem::path& dir);
HeatmapNet load_checkpoint(const std::filesystem::path& dir, KeypointSchema* schema_out = nullptr);

/// RGB [0,255] float image -> normalized NCHW tensor (batch of one).
torch::Tensor to_input_tensor(const cv::Mat& rgb);

/// (1,N,h,w) prediction -> HeatmapStack with the schema's channel names.
HeatmapStack to_heatmap_stack(const torch::Tensor& prediction, const KeypointSchema& schema);

}  // namespace kpforge
