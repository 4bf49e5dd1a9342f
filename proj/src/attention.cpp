#include "memadapt/attention.hpp"

#include <stdexcept>

namespace memadapt {

namespace {
// Additive logit that underflows to exactly zero probability after SoftMax.
constexpr double kMaskedLogit = -1e30;
}  // namespace

Tensor affinity(const Tensor& q, const Tensor& k, const std::vector<uint8_t>& class_mask) {
    if (q.dim() != 3) {
        throw std::invalid_argument("affinity: query must be [C,H,W], got " + shape_str(q.shape()));
    }
    if (k.dim() != 2 || k.size(1) != q.size(0)) {
        throw std::invalid_argument("affinity: key matrix " + shape_str(k.shape()) +
                                    " does not match query channels " + std::to_string(q.size(0)));
    }
    const int ck = k.size(0);
    if (static_cast<int>(class_mask.size()) != ck) {
        throw std::invalid_argument("affinity: mask length does not match class count");
    }
    bool any = false;
    for (uint8_t f : class_mask) any = any || f != 0;
    if (!any) throw std::invalid_argument("affinity: every class is masked");

    const int c = q.size(0), h = q.size(1), w = q.size(2);
    Tensor q_rows = ops::transpose2d(ops::reshape(q, {c, h * w}));  // [HW,C]
    Tensor logits = ops::matmul(q_rows, k, false, true);            // [HW,CK]

    std::vector<double> bias(static_cast<size_t>(h) * w * ck, 0.0);
    for (int j = 0; j < ck; ++j) {
        if (class_mask[static_cast<size_t>(j)]) continue;
        for (int64_t i = 0; i < static_cast<int64_t>(h) * w; ++i)
            bias[static_cast<size_t>(i * ck + j)] = kMaskedLogit;
    }
    logits = ops::add(logits, Tensor::from_data({h * w, ck}, std::move(bias)));
    return ops::softmax(logits, 1);
}

Aggregator::Aggregator(const NetworkSpec& spec, Rng& rng) : channels_(spec.feature_channels) {
    const int c = spec.feature_channels;
    q_proj_ = Conv2dLayer(c, c, 1, 1, 0, 1, rng);
    k_proj_ = Conv2dLayer(c, c, 1, 1, 0, 1, rng);
    v_proj_ = Conv2dLayer(c, c, 1, 1, 0, 1, rng);
    phi_ = ConvBnRelu(c, c, 1, 0, rng);
    theta_ = ConvBnRelu(2 * c, c, 1, 0, rng);
}

Tensor Aggregator::project_rows(const Conv2dLayer& proj, const Tensor& m) const {
    if (m.dim() != 2 || m.size(1) != channels_) {
        throw std::invalid_argument("aggregator: prototype matrix must be [C_K," +
                                    std::to_string(channels_) + "], got " + shape_str(m.shape()));
    }
    const int ck = m.size(0);
    // Rows become spatial positions of a 1x1 conv, so every class prototype
    // is projected by the same map.
    Tensor as_image = ops::reshape(ops::transpose2d(m), {1, channels_, ck, 1});
    Tensor projected = proj.forward(as_image);
    return ops::transpose2d(ops::reshape(projected, {channels_, ck}));
}

Tensor Aggregator::forward(const Tensor& feature, const PrototypeMemory& memory) const {
    if (feature.dim() != 4 || feature.size(1) != channels_) {
        throw std::invalid_argument("aggregator: feature must be [N," + std::to_string(channels_) +
                                    ",H,W], got " + shape_str(feature.shape()));
    }
    const int n = feature.size(0), c = channels_, h = feature.size(2), w = feature.size(3);

    Tensor mixed;
    if (!memory.any_initialized()) {
        mixed = Tensor::zeros({n, c, h, w});
    } else {
        const Tensor m = memory.values_tensor();  // detached constant
        const Tensor k = project_keys(m);
        const Tensor v = project_values(m);
        const Tensor q = project_query(feature);
        std::vector<Tensor> per_sample;
        per_sample.reserve(static_cast<size_t>(n));
        for (int i = 0; i < n; ++i) {
            Tensor qi = ops::reshape(ops::narrow(q, 0, i, 1), {c, h, w});
            Tensor s = affinity(qi, k, memory.initialized_flags());  // [HW,CK]
            Tensor si = ops::matmul(s, v);                           // [HW,C]
            per_sample.push_back(ops::reshape(ops::transpose2d(si), {1, c, h, w}));
        }
        mixed = ops::concat(per_sample, 0);
    }
    Tensor branch = phi_.forward(mixed, training, training && bn_update);
    Tensor fused = ops::concat({branch, feature}, 1);
    return theta_.forward(fused, training, training && bn_update);
}

void Aggregator::collect_all(std::vector<NamedTensor>& params, std::vector<NamedTensor>* state) const {
    q_proj_.collect("q_proj", params, state);
    k_proj_.collect("k_proj", params, state);
    v_proj_.collect("v_proj", params, state);
    phi_.collect("phi", params, state);
    theta_.collect("theta", params, state);
}

}  // namespace memadapt
