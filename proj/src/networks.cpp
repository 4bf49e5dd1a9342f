#include "memadapt/networks.hpp"

#include <cmath>
#include <stdexcept>

namespace memadapt {

void NetworkSpec::validate() const {
    if (input_channels < 1 || feature_channels < 4 || num_classes < 1) {
        throw std::invalid_argument("network spec: channel/class counts out of range");
    }
    if (extractor_blocks < 2) {
        throw std::invalid_argument("network spec: need at least two extractor blocks for stride 4");
    }
    if (final_block_dilation < 1) throw std::invalid_argument("network spec: dilation must be >= 1");
    for (int d : aspp_dilations)
        if (d < 1) throw std::invalid_argument("network spec: aspp dilations must be >= 1");
    if (discriminator_channels.empty() || discriminator_channels.back() != 1) {
        throw std::invalid_argument("network spec: discriminator channels must end in 1");
    }
    if (tile_size < 4 || tile_size % 4 != 0) {
        throw std::invalid_argument("network spec: tile size must be a positive multiple of 4");
    }
}

namespace {

Tensor he_normal(Shape shape, int fan_in, Rng& rng) {
    Tensor t(shape, true);
    const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
    for (auto& v : t.data_vec()) v = rng.normal(0.0, stddev);
    return t;
}

}  // namespace

Conv2dLayer::Conv2dLayer(int in_ch, int out_ch, int kernel, int stride, int pad, int dilation, Rng& rng,
                         bool with_bias)
    : stride(stride), pad(pad), dilation(dilation) {
    weight = he_normal({out_ch, in_ch, kernel, kernel}, in_ch * kernel * kernel, rng);
    if (with_bias) bias = Tensor::zeros({out_ch}, true);
}

void Conv2dLayer::collect(const std::string& prefix, std::vector<NamedTensor>& params,
                          std::vector<NamedTensor>* state) const {
    params.push_back({prefix + ".w", weight});
    if (bias.defined()) params.push_back({prefix + ".b", bias});
    if (state) {
        state->push_back({prefix + ".w", weight});
        if (bias.defined()) state->push_back({prefix + ".b", bias});
    }
}

BatchNormLayer::BatchNormLayer(int channels) {
    gamma = Tensor::full({channels}, 1.0, true);
    beta = Tensor::zeros({channels}, true);
    running_mean = Tensor::zeros({channels});
    running_var = Tensor::full({channels}, 1.0);
}

void BatchNormLayer::collect(const std::string& prefix, std::vector<NamedTensor>& params,
                             std::vector<NamedTensor>* state) const {
    params.push_back({prefix + ".gamma", gamma});
    params.push_back({prefix + ".beta", beta});
    if (state) {
        state->push_back({prefix + ".gamma", gamma});
        state->push_back({prefix + ".beta", beta});
        state->push_back({prefix + ".running_mean", running_mean});
        state->push_back({prefix + ".running_var", running_var});
    }
}

ConvBnRelu::ConvBnRelu(int in_ch, int out_ch, int kernel, int pad, Rng& rng)
    : conv(in_ch, out_ch, kernel, 1, pad, 1, rng), bn(out_ch) {}

void ConvBnRelu::collect(const std::string& prefix, std::vector<NamedTensor>& params,
                         std::vector<NamedTensor>* state) const {
    conv.collect(prefix + ".conv", params, state);
    bn.collect(prefix + ".bn", params, state);
}

ResidualBlock::ResidualBlock(int in_ch, int out_ch, int stride, int dilation, Rng& rng)
    : conv1(in_ch, out_ch, 3, stride, dilation, dilation, rng),
      conv2(out_ch, out_ch, 3, 1, dilation, dilation, rng),
      bn1(out_ch),
      bn2(out_ch) {
    if (stride != 1 || in_ch != out_ch) {
        has_projection = true;
        proj = Conv2dLayer(in_ch, out_ch, 1, stride, 0, 1, rng, /*with_bias=*/false);
        proj_bn = BatchNormLayer(out_ch);
    }
}

Tensor ResidualBlock::forward(const Tensor& x, bool training, bool update_running) const {
    Tensor h = ops::relu(bn1.forward(conv1.forward(x), training, update_running));
    h = bn2.forward(conv2.forward(h), training, update_running);
    Tensor shortcut = has_projection ? proj_bn.forward(proj.forward(x), training, update_running) : x;
    return ops::relu(ops::add(h, shortcut));
}

void ResidualBlock::collect(const std::string& prefix, std::vector<NamedTensor>& params,
                            std::vector<NamedTensor>* state) const {
    conv1.collect(prefix + ".conv1", params, state);
    bn1.collect(prefix + ".bn1", params, state);
    conv2.collect(prefix + ".conv2", params, state);
    bn2.collect(prefix + ".bn2", params, state);
    if (has_projection) {
        proj.collect(prefix + ".proj", params, state);
        proj_bn.collect(prefix + ".proj_bn", params, state);
    }
}

std::vector<NamedTensor> ModuleBase::parameters() const {
    std::vector<NamedTensor> params;
    collect_all(params, nullptr);
    return params;
}

std::vector<NamedTensor> ModuleBase::state_tensors() const {
    std::vector<NamedTensor> params, state;
    collect_all(params, &state);
    return state;
}

int64_t ModuleBase::parameter_count() const {
    int64_t n = 0;
    for (const auto& p : parameters()) n += p.tensor.numel();
    return n;
}

void ModuleBase::load_state(const LoadedBlob& blob, const std::string& prefix) {
    for (auto& nt : state_tensors()) {
        const Tensor& src = blob.get(prefix + nt.name);
        if (src.shape() != nt.tensor.shape()) {
            throw std::runtime_error("load_state: shape mismatch for '" + prefix + nt.name + "': stored " +
                                     shape_str(src.shape()) + ", expected " + shape_str(nt.tensor.shape()));
        }
        nt.tensor.data_vec() = src.data_vec();
    }
}

FeatureExtractor::FeatureExtractor(const NetworkSpec& spec, Rng& rng) : in_channels_(spec.input_channels) {
    spec.validate();
    const int c = spec.feature_channels;
    int in_ch = spec.input_channels;
    for (int i = 0; i < spec.extractor_blocks; ++i) {
        const int out_ch = i == 0 ? std::max(4, c / 4) : (i == 1 ? std::max(4, c / 2) : c);
        const int stride = i < 2 ? 2 : 1;
        const int dilation = (i == spec.extractor_blocks - 1) ? spec.final_block_dilation : 1;
        blocks_.emplace_back(in_ch, out_ch, stride, dilation, rng);
        in_ch = out_ch;
    }
}

Tensor FeatureExtractor::forward(const Tensor& image) const {
    if (image.dim() != 4 || image.size(1) != in_channels_) {
        throw std::invalid_argument("extractor: expected [N," + std::to_string(in_channels_) +
                                    ",H,W], got " + shape_str(image.shape()));
    }
    if (image.size(2) % 4 != 0 || image.size(3) % 4 != 0) {
        throw std::invalid_argument("extractor: spatial size " + std::to_string(image.size(2)) + "x" +
                                    std::to_string(image.size(3)) + " not divisible by 4");
    }
    Tensor h = image;
    for (const auto& block : blocks_) h = block.forward(h, training, training && bn_update);
    return h;
}

void FeatureExtractor::collect_all(std::vector<NamedTensor>& params,
                                   std::vector<NamedTensor>* state) const {
    for (size_t i = 0; i < blocks_.size(); ++i)
        blocks_[i].collect("block" + std::to_string(i), params, state);
}

Classifier::Classifier(const NetworkSpec& spec, Rng& rng) {
    spec.validate();
    const int c = spec.feature_channels;
    for (size_t i = 0; i < 3; ++i) {
        const int d = spec.aspp_dilations[i];
        aspp_[i] = Conv2dLayer(c, c, 3, 1, d, d, rng);
    }
    head1_ = ConvBnRelu(c, c, 3, 1, rng);
    head2_ = ConvBnRelu(c, c, 3, 1, rng);
    score_ = Conv2dLayer(c, spec.num_classes, 1, 1, 0, 1, rng);
}

Tensor Classifier::forward(const Tensor& feature, int target_h, int target_w) const {
    if (feature.dim() != 4) {
        throw std::invalid_argument("classifier: expected [N,C,h,w], got " + shape_str(feature.shape()));
    }
    if (target_h != 4 * feature.size(2) || target_w != 4 * feature.size(3)) {
        throw std::invalid_argument("classifier: target size " + std::to_string(target_h) + "x" +
                                    std::to_string(target_w) + " must be 4x the feature size " +
                                    std::to_string(feature.size(2)) + "x" + std::to_string(feature.size(3)));
    }
    Tensor h = ops::add(ops::add(aspp_[0].forward(feature), aspp_[1].forward(feature)),
                        aspp_[2].forward(feature));
    h = head1_.forward(h, training, training && bn_update);
    h = head2_.forward(h, training, training && bn_update);
    h = score_.forward(h);
    return ops::upsample_bilinear(h, target_h, target_w);
}

void Classifier::collect_all(std::vector<NamedTensor>& params, std::vector<NamedTensor>* state) const {
    for (size_t i = 0; i < 3; ++i) aspp_[i].collect("aspp" + std::to_string(i), params, state);
    head1_.collect("head1", params, state);
    head2_.collect("head2", params, state);
    score_.collect("score", params, state);
}

Discriminator::Discriminator(const NetworkSpec& spec, Rng& rng) {
    spec.validate();
    int in_ch = spec.num_classes;
    for (int out_ch : spec.discriminator_channels) {
        layers_.emplace_back(in_ch, out_ch, 4, 2, 1, 1, rng);
        in_ch = out_ch;
    }
}

Tensor Discriminator::forward(const Tensor& prob) const {
    if (prob.dim() != 4) {
        throw std::invalid_argument("discriminator: expected [N,C_K,H,W], got " + shape_str(prob.shape()));
    }
    const int min_size = min_input_size();
    if (prob.size(2) < min_size || prob.size(3) < min_size) {
        throw std::invalid_argument("discriminator: input " + std::to_string(prob.size(2)) + "x" +
                                    std::to_string(prob.size(3)) + " too small; " +
                                    std::to_string(layers_.size()) + " stride-2 layers need at least " +
                                    std::to_string(min_size) + "x" + std::to_string(min_size));
    }
    // Contract: the input is a per-pixel probability simplex.
    {
        const int n = prob.size(0), ck = prob.size(1), h = prob.size(2), w = prob.size(3);
        const int64_t plane = static_cast<int64_t>(h) * w;
        const double* p = prob.data();
        for (int b = 0; b < n; ++b) {
            for (int64_t i = 0; i < plane; ++i) {
                double s = 0;
                for (int k = 0; k < ck; ++k) s += p[(static_cast<int64_t>(b) * ck + k) * plane + i];
                if (std::abs(s - 1.0) > 1e-6) {
                    throw std::invalid_argument(
                        "discriminator: input is not a probability map (pixel sum " + std::to_string(s) +
                        ")");
                }
            }
        }
    }
    Tensor h = prob;
    for (size_t i = 0; i < layers_.size(); ++i) {
        h = layers_[i].forward(h);
        if (i + 1 < layers_.size()) h = ops::leaky_relu(h, leaky_slope_);
    }
    return h;
}

void Discriminator::collect_all(std::vector<NamedTensor>& params, std::vector<NamedTensor>* state) const {
    for (size_t i = 0; i < layers_.size(); ++i)
        layers_[i].collect("conv" + std::to_string(i), params, state);
}

bool disjoint_parameters(const std::vector<NamedTensor>& a, const std::vector<NamedTensor>& b) {
    for (const auto& x : a)
        for (const auto& y : b)
            if (x.tensor.same_storage(y.tensor)) return false;
    return true;
}

}  // namespace memadapt
