#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "memadapt/ops.hpp"
#include "memadapt/rng.hpp"
#include "memadapt/serialize.hpp"
#include "memadapt/tensor.hpp"

namespace memadapt {

/// Sizes of the desk-scale networks. Defaults mirror the reference topology
/// at reduced width: a stride-4 residual extractor with a dilated final
/// stage, a multi-dilation classification head, and a 5-layer patch
/// discriminator.
struct NetworkSpec {
    int input_channels = 3;
    int feature_channels = 32;  // C
    int num_classes = 6;        // C_K
    int extractor_blocks = 4;
    int final_block_dilation = 2;
    std::array<int, 3> aspp_dilations{1, 2, 3};
    std::vector<int> discriminator_channels{16, 32, 64, 128, 1};
    int tile_size = 32;  // H == W

    void validate() const;
    bool operator==(const NetworkSpec&) const = default;
};

struct Conv2dLayer {
    Tensor weight;  // [OC,IC,KH,KW]
    Tensor bias;    // [OC], undefined when bias-free
    int stride = 1;
    int pad = 0;
    int dilation = 1;

    Conv2dLayer() = default;
    Conv2dLayer(int in_ch, int out_ch, int kernel, int stride, int pad, int dilation, Rng& rng,
                bool with_bias = true);
    Tensor forward(const Tensor& x) const { return ops::conv2d(x, weight, bias, stride, pad, dilation); }
    void collect(const std::string& prefix, std::vector<NamedTensor>& params,
                 std::vector<NamedTensor>* state = nullptr) const;
};

struct BatchNormLayer {
    Tensor gamma, beta;
    Tensor running_mean, running_var;

    BatchNormLayer() = default;
    explicit BatchNormLayer(int channels);
    Tensor forward(const Tensor& x, bool training, bool update_running) const {
        return ops::batch_norm2d(x, gamma, beta, running_mean, running_var, training, update_running);
    }
    void collect(const std::string& prefix, std::vector<NamedTensor>& params,
                 std::vector<NamedTensor>* state = nullptr) const;
};

struct ConvBnRelu {
    Conv2dLayer conv;
    BatchNormLayer bn;

    ConvBnRelu() = default;
    ConvBnRelu(int in_ch, int out_ch, int kernel, int pad, Rng& rng);
    Tensor forward(const Tensor& x, bool training, bool update_running) const {
        return ops::relu(bn.forward(conv.forward(x), training, update_running));
    }
    void collect(const std::string& prefix, std::vector<NamedTensor>& params,
                 std::vector<NamedTensor>* state = nullptr) const;
};

struct ResidualBlock {
    Conv2dLayer conv1, conv2;
    BatchNormLayer bn1, bn2;
    bool has_projection = false;
    Conv2dLayer proj;
    BatchNormLayer proj_bn;

    ResidualBlock() = default;
    ResidualBlock(int in_ch, int out_ch, int stride, int dilation, Rng& rng);
    Tensor forward(const Tensor& x, bool training, bool update_running) const;
    void collect(const std::string& prefix, std::vector<NamedTensor>& params,
                 std::vector<NamedTensor>* state = nullptr) const;
};

/// Common mode switches shared by the trainable networks.
struct ModuleBase {
    bool training = true;
    bool bn_update = true;  // fold batch stats into running buffers

    std::vector<NamedTensor> parameters() const;
    std::vector<NamedTensor> state_tensors() const;
    int64_t parameter_count() const;
    /// Overwrites parameters and running stats from a loaded blob, matching by name.
    void load_state(const LoadedBlob& blob, const std::string& prefix);

protected:
    virtual void collect_all(std::vector<NamedTensor>& params,
                             std::vector<NamedTensor>* state) const = 0;
    virtual ~ModuleBase() = default;
};

/// Residual feature extractor with overall spatial stride 4; the final block
/// trades further downsampling for dilation.
class FeatureExtractor : public ModuleBase {
public:
    FeatureExtractor(const NetworkSpec& spec, Rng& rng);
    /// [N,in_ch,H,W] -> [N,C,H/4,W/4]; H and W must be divisible by 4.
    Tensor forward(const Tensor& image) const;

protected:
    void collect_all(std::vector<NamedTensor>& params, std::vector<NamedTensor>* state) const override;

private:
    std::vector<ResidualBlock> blocks_;
    int in_channels_;
};

/// Classification head: three parallel dilated 3x3 convolutions summed,
/// two conv-BN-ReLU layers, a linear 1x1 scoring layer, then bilinear
/// interpolation back to tile resolution.
class Classifier : public ModuleBase {
public:
    Classifier(const NetworkSpec& spec, Rng& rng);
    /// feature: [N,C,h,w]; target must equal (4h,4w). Returns [N,C_K,4h,4w] logits.
    Tensor forward(const Tensor& feature, int target_h, int target_w) const;

protected:
    void collect_all(std::vector<NamedTensor>& params, std::vector<NamedTensor>* state) const override;

private:
    std::array<Conv2dLayer, 3> aspp_;
    ConvBnRelu head1_, head2_;
    Conv2dLayer score_;
};

/// Patch discriminator: stride-2 4x4 convolutions with leaky-ReLU, final
/// single-channel logits. Consumes per-pixel probability maps.
class Discriminator : public ModuleBase {
public:
    Discriminator(const NetworkSpec& spec, Rng& rng);
    /// prob: [N,C_K,H,W] with each pixel summing to 1 (checked to 1e-6).
    Tensor forward(const Tensor& prob) const;
    int min_input_size() const { return 1 << static_cast<int>(layers_.size()); }

protected:
    void collect_all(std::vector<NamedTensor>& params, std::vector<NamedTensor>* state) const override;

private:
    std::vector<Conv2dLayer> layers_;
    double leaky_slope_ = 0.2;
};

/// True when the two parameter sets share no storage (independently
/// parameterized networks).
bool disjoint_parameters(const std::vector<NamedTensor>& a, const std::vector<NamedTensor>& b);

}  // namespace memadapt
