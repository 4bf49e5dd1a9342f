#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "memadapt/tensor.hpp"

namespace memadapt {
namespace ops {

// Elementwise. Shapes must match exactly; no implicit broadcasting.
Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor relu(const Tensor& x);
Tensor leaky_relu(const Tensor& x, double negative_slope);
Tensor log(const Tensor& x);

/// SoftMax along `axis` (negative axes count from the back).
Tensor softmax(const Tensor& x, int axis);

Tensor sum_all(const Tensor& x);
Tensor mean_all(const Tensor& x);

/// 2-D matrix product with optional transposes.
Tensor matmul(const Tensor& a, const Tensor& b, bool trans_a = false, bool trans_b = false);

/// x: [N,IC,H,W], weight: [OC,IC,KH,KW], bias: [OC] or undefined.
/// Zero padding; configurable stride and dilation.
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, int stride, int pad,
              int dilation = 1);

/// Per-channel affine normalization over (N,H,W). In training mode uses batch
/// statistics and, when update_running is set, folds them into the running
/// buffers with the given decay. In eval mode normalizes by the running stats.
Tensor batch_norm2d(const Tensor& x, const Tensor& gamma, const Tensor& beta, Tensor running_mean,
                    Tensor running_var, bool training, bool update_running = true,
                    double decay = 0.9, double eps = 1e-5);

Tensor upsample_bilinear(const Tensor& x, int out_h, int out_w);
Tensor upsample_nearest(const Tensor& x, int out_h, int out_w);

Tensor concat(const std::vector<Tensor>& parts, int axis);
Tensor narrow(const Tensor& x, int axis, int start, int length);

Tensor reshape(const Tensor& x, Shape new_shape);
Tensor transpose2d(const Tensor& x);

/// Mean pixelwise cross-entropy of softmax(logits) against integer labels.
/// logits: [N,CK,H,W]; labels: N*H*W row-major ints; void_label pixels are
/// excluded from both numerator and denominator. All-void input yields a
/// constant zero with a warning (no gradient).
Tensor cross_entropy_mean(const Tensor& logits, const std::vector<int32_t>& labels, int void_label);

/// Mean binary cross-entropy of sigmoid(x) against a constant target in {0,1},
/// evaluated in the stable log-sum-exp form.
Tensor bce_with_logits_mean(const Tensor& x, double target);

}  // namespace ops

/// Max over elements of |analytic - numeric| / max(1, |analytic|, |numeric|),
/// comparing reverse-mode gradients of the scalar program `f` at `x` against
/// central finite differences with step `eps`.
double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double eps = 1e-5);

}  // namespace memadapt
