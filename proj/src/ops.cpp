#include "memadapt/ops.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "memadapt/log.hpp"

namespace memadapt {
namespace ops {

namespace {

void require(bool cond, const std::string& msg) {
    if (!cond) throw std::invalid_argument(msg);
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                                    shape_str(b.shape()));
    }
}

/// Records the op on the active tape when grad tracking is on.
void finalize(const char* op, Tensor& out, bool needs_grad, std::function<void()> backward) {
    check_finite(op, out);
    if (!Tape::recording() || !needs_grad) return;
    out.set_requires_grad(true);
    Tape::active().record({op, out, std::move(backward)});
}

void axpy(std::vector<double>& acc, const std::vector<double>& g, double c) {
    const size_t n = acc.size();
    const double* gp = g.data();
    double* ap = acc.data();
    for (size_t i = 0; i < n; ++i) ap[i] += c * gp[i];
}

/// Strict-FP-safe dot product: four independent accumulator lanes.
inline double dot1(const double* a, const double* b, int n) {
    double s0 = 0, s1 = 0, s2 = 0, s3 = 0;
    int i = 0;
    for (; i + 4 <= n; i += 4) {
        s0 += a[i] * b[i];
        s1 += a[i + 1] * b[i + 1];
        s2 += a[i + 2] * b[i + 2];
        s3 += a[i + 3] * b[i + 3];
    }
    double tail = 0;
    for (; i < n; ++i) tail += a[i] * b[i];
    return ((s0 + s1) + (s2 + s3)) + tail;
}

inline double dot_strided(const double* a, const double* b, int n, int bstride) {
    double s0 = 0, s1 = 0, s2 = 0, s3 = 0;
    int i = 0;
    for (; i + 4 <= n; i += 4) {
        s0 += a[i] * b[(i) * bstride];
        s1 += a[i + 1] * b[(i + 1) * bstride];
        s2 += a[i + 2] * b[(i + 2) * bstride];
        s3 += a[i + 3] * b[(i + 3) * bstride];
    }
    double tail = 0;
    for (; i < n; ++i) tail += a[i] * b[i * bstride];
    return ((s0 + s1) + (s2 + s3)) + tail;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape("add", a, b);
    Tensor out(a.shape());
    const double* ap = a.data();
    const double* bp = b.data();
    double* op = out.data();
    const int64_t n = out.numel();
    for (int64_t i = 0; i < n; ++i) op[i] = ap[i] + bp[i];
    const bool ga = a.requires_grad(), gb = b.requires_grad();
    finalize("add", out, ga || gb, [=]() mutable {
        const auto& g = out.grad_vec();
        if (ga) axpy(a.grad_vec(), g, 1.0);
        if (gb) axpy(b.grad_vec(), g, 1.0);
    });
    return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape("mul", a, b);
    Tensor out(a.shape());
    const double* ap = a.data();
    const double* bp = b.data();
    double* op = out.data();
    const int64_t n = out.numel();
    for (int64_t i = 0; i < n; ++i) op[i] = ap[i] * bp[i];
    const bool ga = a.requires_grad(), gb = b.requires_grad();
    finalize("mul", out, ga || gb, [=]() mutable {
        const auto& g = out.grad_vec();
        if (ga) {
            auto& gr = a.grad_vec();
            const double* bq = b.data();
            for (int64_t i = 0; i < n; ++i) gr[i] += g[i] * bq[i];
        }
        if (gb) {
            auto& gr = b.grad_vec();
            const double* aq = a.data();
            for (int64_t i = 0; i < n; ++i) gr[i] += g[i] * aq[i];
        }
    });
    return out;
}

Tensor scale(const Tensor& a, double factor) {
    Tensor out(a.shape());
    const double* ap = a.data();
    double* op = out.data();
    const int64_t n = out.numel();
    for (int64_t i = 0; i < n; ++i) op[i] = factor * ap[i];
    const bool ga = a.requires_grad();
    finalize("scale", out, ga, [=]() mutable {
        if (ga) axpy(a.grad_vec(), out.grad_vec(), factor);
    });
    return out;
}

Tensor relu(const Tensor& x) {
    Tensor out(x.shape());
    const double* xp = x.data();
    double* op = out.data();
    const int64_t n = out.numel();
    for (int64_t i = 0; i < n; ++i) op[i] = xp[i] > 0 ? xp[i] : 0.0;
    const bool gx = x.requires_grad();
    finalize("relu", out, gx, [=]() mutable {
        if (!gx) return;
        const auto& g = out.grad_vec();
        auto& gr = x.grad_vec();
        const double* xq = x.data();
        for (int64_t i = 0; i < n; ++i)
            if (xq[i] > 0) gr[i] += g[i];
    });
    return out;
}

Tensor leaky_relu(const Tensor& x, double negative_slope) {
    Tensor out(x.shape());
    const double* xp = x.data();
    double* op = out.data();
    const int64_t n = out.numel();
    for (int64_t i = 0; i < n; ++i) op[i] = xp[i] > 0 ? xp[i] : negative_slope * xp[i];
    const bool gx = x.requires_grad();
    finalize("leaky_relu", out, gx, [=]() mutable {
        if (!gx) return;
        const auto& g = out.grad_vec();
        auto& gr = x.grad_vec();
        const double* xq = x.data();
        for (int64_t i = 0; i < n; ++i) gr[i] += xq[i] > 0 ? g[i] : negative_slope * g[i];
    });
    return out;
}

Tensor log(const Tensor& x) {
    Tensor out(x.shape());
    const double* xp = x.data();
    double* op = out.data();
    const int64_t n = out.numel();
    for (int64_t i = 0; i < n; ++i) op[i] = std::log(xp[i]);
    const bool gx = x.requires_grad();
    finalize("log", out, gx, [=]() mutable {
        if (!gx) return;
        const auto& g = out.grad_vec();
        auto& gr = x.grad_vec();
        const double* xq = x.data();
        for (int64_t i = 0; i < n; ++i) gr[i] += g[i] / xq[i];
    });
    return out;
}

Tensor softmax(const Tensor& x, int axis) {
    if (axis < 0) axis += x.dim();
    require(axis >= 0 && axis < x.dim(),
            "softmax: axis out of range for shape " + shape_str(x.shape()));
    const int k = x.shape()[static_cast<size_t>(axis)];
    int64_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= x.shape()[static_cast<size_t>(i)];
    for (int i = axis + 1; i < x.dim(); ++i) inner *= x.shape()[static_cast<size_t>(i)];

    Tensor out(x.shape());
    const double* xp = x.data();
    double* op = out.data();
    for (int64_t o = 0; o < outer; ++o) {
        for (int64_t in = 0; in < inner; ++in) {
            const int64_t base = o * k * inner + in;
            double mx = xp[base];
            for (int j = 1; j < k; ++j) mx = std::max(mx, xp[base + j * inner]);
            double denom = 0;
            for (int j = 0; j < k; ++j) {
                const double e = std::exp(xp[base + j * inner] - mx);
                op[base + j * inner] = e;
                denom += e;
            }
            const double inv = 1.0 / denom;
            for (int j = 0; j < k; ++j) op[base + j * inner] *= inv;
        }
    }
    const bool gx = x.requires_grad();
    finalize("softmax", out, gx, [=]() mutable {
        if (!gx) return;
        const auto& g = out.grad_vec();
        auto& gr = x.grad_vec();
        const double* y = out.data();
        for (int64_t o = 0; o < outer; ++o) {
            for (int64_t in = 0; in < inner; ++in) {
                const int64_t base = o * k * inner + in;
                double dot = 0;
                for (int j = 0; j < k; ++j) dot += g[base + j * inner] * y[base + j * inner];
                for (int j = 0; j < k; ++j) {
                    const int64_t idx = base + j * inner;
                    gr[idx] += y[idx] * (g[idx] - dot);
                }
            }
        }
    });
    return out;
}

Tensor sum_all(const Tensor& x) {
    double s = 0;
    const double* xp = x.data();
    const int64_t n = x.numel();
    for (int64_t i = 0; i < n; ++i) s += xp[i];
    Tensor out = Tensor::scalar(s);
    const bool gx = x.requires_grad();
    finalize("sum", out, gx, [=]() mutable {
        if (!gx) return;
        const double g = out.grad_vec()[0];
        auto& gr = x.grad_vec();
        for (int64_t i = 0; i < n; ++i) gr[i] += g;
    });
    return out;
}

Tensor mean_all(const Tensor& x) {
    double s = 0;
    const double* xp = x.data();
    const int64_t n = x.numel();
    for (int64_t i = 0; i < n; ++i) s += xp[i];
    Tensor out = Tensor::scalar(s / static_cast<double>(n));
    const bool gx = x.requires_grad();
    finalize("mean", out, gx, [=]() mutable {
        if (!gx) return;
        const double g = out.grad_vec()[0] / static_cast<double>(n);
        auto& gr = x.grad_vec();
        for (int64_t i = 0; i < n; ++i) gr[i] += g;
    });
    return out;
}

namespace {

// C[r,c] = sum_k A(r,k) B(k,c) with logical transposes applied to A/B reads.
void matmul_into(double* c, const double* a, const double* b, int rows, int cols, int kk,
                 bool trans_a, bool trans_b, bool accumulate) {
    for (int r = 0; r < rows; ++r) {
        double* crow = c + static_cast<int64_t>(r) * cols;
        if (!accumulate) std::fill(crow, crow + cols, 0.0);
        for (int k = 0; k < kk; ++k) {
            const double av = trans_a ? a[static_cast<int64_t>(k) * rows + r]
                                      : a[static_cast<int64_t>(r) * kk + k];
            if (!trans_b) {
                const double* brow = b + static_cast<int64_t>(k) * cols;
                for (int cc = 0; cc < cols; ++cc) crow[cc] += av * brow[cc];
            } else {
                const double* bcol = b + k;
                for (int cc = 0; cc < cols; ++cc) crow[cc] += av * bcol[static_cast<int64_t>(cc) * kk];
            }
        }
    }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b, bool trans_a, bool trans_b) {
    require(a.dim() == 2 && b.dim() == 2, "matmul: expects 2-D operands, got " + shape_str(a.shape()) +
                                              " and " + shape_str(b.shape()));
    const int ar = trans_a ? a.size(1) : a.size(0);
    const int ak = trans_a ? a.size(0) : a.size(1);
    const int bk = trans_b ? b.size(1) : b.size(0);
    const int bc = trans_b ? b.size(0) : b.size(1);
    require(ak == bk, "matmul: inner dimensions disagree, " + std::to_string(ak) + " vs " +
                          std::to_string(bk));
    Tensor out({ar, bc});
    matmul_into(out.data(), a.data(), b.data(), ar, bc, ak, trans_a, trans_b, false);
    const bool ga = a.requires_grad(), gb = b.requires_grad();
    finalize("matmul", out, ga || gb, [=]() mutable {
        const double* g = out.grad_vec().data();
        // dA = dC B^T (untransposed view); transposes permute the roles.
        if (ga) {
            double* gr = a.grad_vec().data();
            if (!trans_a)
                matmul_into(gr, g, b.data(), ar, ak, bc, false, !trans_b, true);
            else
                matmul_into(gr, b.data(), g, ak, ar, bc, trans_b, true, true);
        }
        if (gb) {
            double* gr = b.grad_vec().data();
            if (!trans_b)
                matmul_into(gr, a.data(), g, ak, bc, ar, !trans_a, false, true);
            else
                matmul_into(gr, g, a.data(), bc, ak, ar, true, trans_a, true);
        }
    });
    return out;
}

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, int stride, int pad,
              int dilation) {
    require(x.dim() == 4, "conv2d: input must be [N,C,H,W], got " + shape_str(x.shape()));
    require(weight.dim() == 4, "conv2d: weight must be [OC,IC,KH,KW], got " + shape_str(weight.shape()));
    require(stride >= 1 && dilation >= 1 && pad >= 0, "conv2d: invalid stride/dilation/pad");
    const int n_batch = x.size(0), ic = x.size(1), h = x.size(2), w = x.size(3);
    const int oc = weight.size(0), kh = weight.size(2), kw = weight.size(3);
    require(weight.size(1) == ic, "conv2d: input channel axis (" + std::to_string(ic) +
                                      ") does not match weight in-channels (" +
                                      std::to_string(weight.size(1)) + ")");
    if (bias.defined()) {
        require(bias.dim() == 1 && bias.size(0) == oc,
                "conv2d: bias must be [OC]=" + std::to_string(oc) + ", got " + shape_str(bias.shape()));
    }
    const int oh = (h + 2 * pad - dilation * (kh - 1) - 1) / stride + 1;
    const int ow = (w + 2 * pad - dilation * (kw - 1) - 1) / stride + 1;
    require(h + 2 * pad >= dilation * (kh - 1) + 1 && w + 2 * pad >= dilation * (kw - 1) + 1 && oh >= 1 &&
                ow >= 1,
            "conv2d: kernel " + std::to_string(kh) + "x" + std::to_string(kw) +
                " with dilation " + std::to_string(dilation) + " exceeds padded input " +
                shape_str(x.shape()));

    Tensor out({n_batch, oc, oh, ow});
    const double* xp = x.data();
    const double* wp = weight.data();
    double* op = out.data();
    for (int n = 0; n < n_batch; ++n) {
        for (int o = 0; o < oc; ++o) {
            double* obase = op + (static_cast<int64_t>(n) * oc + o) * oh * ow;
            if (bias.defined()) {
                const double bv = bias.data()[o];
                std::fill(obase, obase + static_cast<int64_t>(oh) * ow, bv);
            }
            for (int c = 0; c < ic; ++c) {
                const double* xc = xp + (static_cast<int64_t>(n) * ic + c) * h * w;
                const double* wc = wp + (static_cast<int64_t>(o) * ic + c) * kh * kw;
                for (int r = 0; r < kh; ++r) {
                    for (int s = 0; s < kw; ++s) {
                        const double wv = wc[r * kw + s];
                        const int iw0 = -pad + s * dilation;
                        int ow_lo = 0, ow_hi = ow - 1;
                        if (iw0 < 0) ow_lo = (-iw0 + stride - 1) / stride;
                        if (iw0 + static_cast<int64_t>(ow_hi) * stride > w - 1)
                            ow_hi = (w - 1 - iw0) / stride;
                        for (int y = 0; y < oh; ++y) {
                            const int ih = y * stride - pad + r * dilation;
                            if (ih < 0 || ih >= h) continue;
                            const double* xrow = xc + static_cast<int64_t>(ih) * w + iw0;
                            double* orow = obase + static_cast<int64_t>(y) * ow;
                            if (stride == 1) {
                                for (int z = ow_lo; z <= ow_hi; ++z) orow[z] += wv * xrow[z];
                            } else {
                                for (int z = ow_lo; z <= ow_hi; ++z) orow[z] += wv * xrow[z * stride];
                            }
                        }
                    }
                }
            }
        }
    }

    const bool gx = x.requires_grad();
    const bool gw = weight.requires_grad();
    const bool gb = bias.defined() && bias.requires_grad();
    finalize("conv2d", out, gx || gw || gb, [=]() mutable {
        const double* g = out.grad_vec().data();
        if (gb) {
            auto& gbias = bias.grad_vec();
            for (int n = 0; n < n_batch; ++n)
                for (int o = 0; o < oc; ++o) {
                    const double* grow = g + (static_cast<int64_t>(n) * oc + o) * oh * ow;
                    double s = 0;
                    for (int64_t i = 0; i < static_cast<int64_t>(oh) * ow; ++i) s += grow[i];
                    gbias[static_cast<size_t>(o)] += s;
                }
        }
        if (gw) {
            auto& gwv = weight.grad_vec();
            const double* xq = x.data();
            for (int n = 0; n < n_batch; ++n) {
                for (int o = 0; o < oc; ++o) {
                    const double* gbase = g + (static_cast<int64_t>(n) * oc + o) * oh * ow;
                    for (int c = 0; c < ic; ++c) {
                        const double* xc = xq + (static_cast<int64_t>(n) * ic + c) * h * w;
                        double* wc = gwv.data() + (static_cast<int64_t>(o) * ic + c) * kh * kw;
                        for (int r = 0; r < kh; ++r) {
                            for (int s = 0; s < kw; ++s) {
                                const int iw0 = -pad + s * dilation;
                                int ow_lo = 0, ow_hi = ow - 1;
                                if (iw0 < 0) ow_lo = (-iw0 + stride - 1) / stride;
                                if (iw0 + static_cast<int64_t>(ow_hi) * stride > w - 1)
                                    ow_hi = (w - 1 - iw0) / stride;
                                if (ow_lo > ow_hi) continue;
                                double acc = 0;
                                for (int y = 0; y < oh; ++y) {
                                    const int ih = y * stride - pad + r * dilation;
                                    if (ih < 0 || ih >= h) continue;
                                    const double* xrow = xc + static_cast<int64_t>(ih) * w + iw0;
                                    const double* grow = gbase + static_cast<int64_t>(y) * ow;
                                    if (stride == 1)
                                        acc += dot1(grow + ow_lo, xrow + ow_lo, ow_hi - ow_lo + 1);
                                    else
                                        acc += dot_strided(grow + ow_lo, xrow + static_cast<int64_t>(ow_lo) * stride,
                                                           ow_hi - ow_lo + 1, stride);
                                }
                                wc[r * kw + s] += acc;
                            }
                        }
                    }
                }
            }
        }
        if (gx) {
            auto& gxv = x.grad_vec();
            const double* wq = weight.data();
            for (int n = 0; n < n_batch; ++n) {
                for (int o = 0; o < oc; ++o) {
                    const double* gbase = g + (static_cast<int64_t>(n) * oc + o) * oh * ow;
                    for (int c = 0; c < ic; ++c) {
                        double* xc = gxv.data() + (static_cast<int64_t>(n) * ic + c) * h * w;
                        const double* wc = wq + (static_cast<int64_t>(o) * ic + c) * kh * kw;
                        for (int r = 0; r < kh; ++r) {
                            for (int s = 0; s < kw; ++s) {
                                const double wv = wc[r * kw + s];
                                const int iw0 = -pad + s * dilation;
                                int ow_lo = 0, ow_hi = ow - 1;
                                if (iw0 < 0) ow_lo = (-iw0 + stride - 1) / stride;
                                if (iw0 + static_cast<int64_t>(ow_hi) * stride > w - 1)
                                    ow_hi = (w - 1 - iw0) / stride;
                                for (int y = 0; y < oh; ++y) {
                                    const int ih = y * stride - pad + r * dilation;
                                    if (ih < 0 || ih >= h) continue;
                                    double* xrow = xc + static_cast<int64_t>(ih) * w + iw0;
                                    const double* grow = gbase + static_cast<int64_t>(y) * ow;
                                    if (stride == 1) {
                                        for (int z = ow_lo; z <= ow_hi; ++z) xrow[z] += wv * grow[z];
                                    } else {
                                        for (int z = ow_lo; z <= ow_hi; ++z)
                                            xrow[z * stride] += wv * grow[z];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    });
    return out;
}

Tensor batch_norm2d(const Tensor& x, const Tensor& gamma, const Tensor& beta, Tensor running_mean,
                    Tensor running_var, bool training, bool update_running, double decay, double eps) {
    require(x.dim() == 4, "batch_norm2d: input must be [N,C,H,W], got " + shape_str(x.shape()));
    const int n_batch = x.size(0), c = x.size(1), h = x.size(2), w = x.size(3);
    require(gamma.dim() == 1 && gamma.size(0) == c && beta.dim() == 1 && beta.size(0) == c,
            "batch_norm2d: affine parameters must be [C]=" + std::to_string(c));
    const int64_t plane = static_cast<int64_t>(h) * w;
    const int64_t m = static_cast<int64_t>(n_batch) * plane;

    std::vector<double> mean(static_cast<size_t>(c)), inv_std(static_cast<size_t>(c));
    const double* xp = x.data();
    if (training) {
        for (int ch = 0; ch < c; ++ch) {
            double s = 0;
            for (int n = 0; n < n_batch; ++n) {
                const double* row = xp + (static_cast<int64_t>(n) * c + ch) * plane;
                for (int64_t i = 0; i < plane; ++i) s += row[i];
            }
            const double mu = s / static_cast<double>(m);
            double var = 0;
            for (int n = 0; n < n_batch; ++n) {
                const double* row = xp + (static_cast<int64_t>(n) * c + ch) * plane;
                for (int64_t i = 0; i < plane; ++i) {
                    const double d = row[i] - mu;
                    var += d * d;
                }
            }
            var /= static_cast<double>(m);
            mean[static_cast<size_t>(ch)] = mu;
            inv_std[static_cast<size_t>(ch)] = 1.0 / std::sqrt(var + eps);
            if (update_running) {
                running_mean.data()[ch] = decay * running_mean.data()[ch] + (1.0 - decay) * mu;
                running_var.data()[ch] = decay * running_var.data()[ch] + (1.0 - decay) * var;
            }
        }
    } else {
        for (int ch = 0; ch < c; ++ch) {
            mean[static_cast<size_t>(ch)] = running_mean.data()[ch];
            inv_std[static_cast<size_t>(ch)] = 1.0 / std::sqrt(running_var.data()[ch] + eps);
        }
    }

    Tensor out(x.shape());
    double* op = out.data();
    const double* gp = gamma.data();
    const double* bp = beta.data();
    for (int n = 0; n < n_batch; ++n) {
        for (int ch = 0; ch < c; ++ch) {
            const double mu = mean[static_cast<size_t>(ch)];
            const double is = inv_std[static_cast<size_t>(ch)];
            const double a = gp[ch] * is;
            const double b = bp[ch] - a * mu;
            const double* row = xp + (static_cast<int64_t>(n) * c + ch) * plane;
            double* orow = op + (static_cast<int64_t>(n) * c + ch) * plane;
            for (int64_t i = 0; i < plane; ++i) orow[i] = a * row[i] + b;
        }
    }

    const bool gx = x.requires_grad();
    const bool gg = gamma.requires_grad();
    const bool gb = beta.requires_grad();
    finalize("batch_norm2d", out, gx || gg || gb,
             [=, mean = std::move(mean), inv_std = std::move(inv_std)]() mutable {
                 const double* g = out.grad_vec().data();
                 const double* xq = x.data();
                 for (int ch = 0; ch < c; ++ch) {
                     const double mu = mean[static_cast<size_t>(ch)];
                     const double is = inv_std[static_cast<size_t>(ch)];
                     double sum_g = 0, sum_gx = 0;  // sum of g and of g * xhat
                     for (int n = 0; n < n_batch; ++n) {
                         const int64_t base = (static_cast<int64_t>(n) * c + ch) * plane;
                         for (int64_t i = 0; i < plane; ++i) {
                             const double gv = g[base + i];
                             sum_g += gv;
                             sum_gx += gv * (xq[base + i] - mu) * is;
                         }
                     }
                     if (gg) gamma.grad_vec()[static_cast<size_t>(ch)] += sum_gx;
                     if (gb) beta.grad_vec()[static_cast<size_t>(ch)] += sum_g;
                     if (gx) {
                         auto& gr = x.grad_vec();
                         const double a = gamma.data()[ch] * is;
                         if (training) {
                             const double inv_m = 1.0 / static_cast<double>(m);
                             for (int n = 0; n < n_batch; ++n) {
                                 const int64_t base = (static_cast<int64_t>(n) * c + ch) * plane;
                                 for (int64_t i = 0; i < plane; ++i) {
                                     const double xhat = (xq[base + i] - mu) * is;
                                     gr[base + i] +=
                                         a * (g[base + i] - inv_m * sum_g - xhat * inv_m * sum_gx);
                                 }
                             }
                         } else {
                             for (int n = 0; n < n_batch; ++n) {
                                 const int64_t base = (static_cast<int64_t>(n) * c + ch) * plane;
                                 for (int64_t i = 0; i < plane; ++i) gr[base + i] += a * g[base + i];
                             }
                         }
                     }
                 }
             });
    return out;
}

namespace {

struct LerpAxis {
    std::vector<int> lo, hi;
    std::vector<double> frac;  // weight of hi
};

LerpAxis bilinear_axis(int in, int out) {
    LerpAxis ax;
    ax.lo.resize(static_cast<size_t>(out));
    ax.hi.resize(static_cast<size_t>(out));
    ax.frac.resize(static_cast<size_t>(out));
    const double s = static_cast<double>(in) / static_cast<double>(out);
    for (int i = 0; i < out; ++i) {
        double src = (i + 0.5) * s - 0.5;
        if (src < 0) src = 0;
        int lo = static_cast<int>(src);
        if (lo > in - 1) lo = in - 1;
        const int hi = std::min(lo + 1, in - 1);
        ax.lo[static_cast<size_t>(i)] = lo;
        ax.hi[static_cast<size_t>(i)] = hi;
        ax.frac[static_cast<size_t>(i)] = src - lo;
    }
    return ax;
}

}  // namespace

Tensor upsample_bilinear(const Tensor& x, int out_h, int out_w) {
    require(x.dim() == 4, "upsample_bilinear: input must be [N,C,H,W], got " + shape_str(x.shape()));
    require(out_h >= 1 && out_w >= 1, "upsample_bilinear: invalid target size");
    const int n_batch = x.size(0), c = x.size(1), h = x.size(2), w = x.size(3);
    const LerpAxis ay = bilinear_axis(h, out_h);
    const LerpAxis axx = bilinear_axis(w, out_w);
    Tensor out({n_batch, c, out_h, out_w});
    const double* xp = x.data();
    double* op = out.data();
    const int64_t planes = static_cast<int64_t>(n_batch) * c;
    for (int64_t pl = 0; pl < planes; ++pl) {
        const double* xc = xp + pl * h * w;
        double* oc = op + pl * static_cast<int64_t>(out_h) * out_w;
        for (int y = 0; y < out_h; ++y) {
            const double fy = ay.frac[static_cast<size_t>(y)];
            const double* r0 = xc + static_cast<int64_t>(ay.lo[static_cast<size_t>(y)]) * w;
            const double* r1 = xc + static_cast<int64_t>(ay.hi[static_cast<size_t>(y)]) * w;
            double* orow = oc + static_cast<int64_t>(y) * out_w;
            for (int z = 0; z < out_w; ++z) {
                const double fx = axx.frac[static_cast<size_t>(z)];
                const int x0 = axx.lo[static_cast<size_t>(z)], x1 = axx.hi[static_cast<size_t>(z)];
                const double top = r0[x0] * (1 - fx) + r0[x1] * fx;
                const double bot = r1[x0] * (1 - fx) + r1[x1] * fx;
                orow[z] = top * (1 - fy) + bot * fy;
            }
        }
    }
    const bool gx = x.requires_grad();
    finalize("upsample_bilinear", out, gx, [=]() mutable {
        if (!gx) return;
        const double* g = out.grad_vec().data();
        double* gr = x.grad_vec().data();
        for (int64_t pl = 0; pl < planes; ++pl) {
            double* xc = gr + pl * h * w;
            const double* oc = g + pl * static_cast<int64_t>(out_h) * out_w;
            for (int y = 0; y < out_h; ++y) {
                const double fy = ay.frac[static_cast<size_t>(y)];
                double* r0 = xc + static_cast<int64_t>(ay.lo[static_cast<size_t>(y)]) * w;
                double* r1 = xc + static_cast<int64_t>(ay.hi[static_cast<size_t>(y)]) * w;
                const double* orow = oc + static_cast<int64_t>(y) * out_w;
                for (int z = 0; z < out_w; ++z) {
                    const double fx = axx.frac[static_cast<size_t>(z)];
                    const int x0 = axx.lo[static_cast<size_t>(z)], x1 = axx.hi[static_cast<size_t>(z)];
                    const double gv = orow[z];
                    r0[x0] += gv * (1 - fy) * (1 - fx);
                    r0[x1] += gv * (1 - fy) * fx;
                    r1[x0] += gv * fy * (1 - fx);
                    r1[x1] += gv * fy * fx;
                }
            }
        }
    });
    return out;
}

Tensor upsample_nearest(const Tensor& x, int out_h, int out_w) {
    require(x.dim() == 4, "upsample_nearest: input must be [N,C,H,W], got " + shape_str(x.shape()));
    require(out_h >= 1 && out_w >= 1, "upsample_nearest: invalid target size");
    const int n_batch = x.size(0), c = x.size(1), h = x.size(2), w = x.size(3);
    std::vector<int> iy(static_cast<size_t>(out_h)), ix(static_cast<size_t>(out_w));
    for (int y = 0; y < out_h; ++y)
        iy[static_cast<size_t>(y)] = std::min(h - 1, static_cast<int>(static_cast<int64_t>(y) * h / out_h));
    for (int z = 0; z < out_w; ++z)
        ix[static_cast<size_t>(z)] = std::min(w - 1, static_cast<int>(static_cast<int64_t>(z) * w / out_w));
    Tensor out({n_batch, c, out_h, out_w});
    const double* xp = x.data();
    double* op = out.data();
    const int64_t planes = static_cast<int64_t>(n_batch) * c;
    for (int64_t pl = 0; pl < planes; ++pl) {
        const double* xc = xp + pl * h * w;
        double* oc = op + pl * static_cast<int64_t>(out_h) * out_w;
        for (int y = 0; y < out_h; ++y)
            for (int z = 0; z < out_w; ++z)
                oc[static_cast<int64_t>(y) * out_w + z] =
                    xc[static_cast<int64_t>(iy[static_cast<size_t>(y)]) * w + ix[static_cast<size_t>(z)]];
    }
    const bool gx = x.requires_grad();
    finalize("upsample_nearest", out, gx, [=]() mutable {
        if (!gx) return;
        const double* g = out.grad_vec().data();
        double* gr = x.grad_vec().data();
        for (int64_t pl = 0; pl < planes; ++pl) {
            double* xc = gr + pl * h * w;
            const double* oc = g + pl * static_cast<int64_t>(out_h) * out_w;
            for (int y = 0; y < out_h; ++y)
                for (int z = 0; z < out_w; ++z)
                    xc[static_cast<int64_t>(iy[static_cast<size_t>(y)]) * w + ix[static_cast<size_t>(z)]] +=
                        oc[static_cast<int64_t>(y) * out_w + z];
        }
    });
    return out;
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
    require(!parts.empty(), "concat: needs at least one operand");
    const int nd = parts[0].dim();
    if (axis < 0) axis += nd;
    require(axis >= 0 && axis < nd, "concat: axis out of range");
    Shape out_shape = parts[0].shape();
    int total = 0;
    for (const auto& p : parts) {
        require(p.dim() == nd, "concat: rank mismatch");
        for (int i = 0; i < nd; ++i) {
            if (i == axis) continue;
            require(p.shape()[static_cast<size_t>(i)] == out_shape[static_cast<size_t>(i)],
                    "concat: shape mismatch on axis " + std::to_string(i) + ": " + shape_str(p.shape()) +
                        " vs " + shape_str(parts[0].shape()));
        }
        total += p.shape()[static_cast<size_t>(axis)];
    }
    out_shape[static_cast<size_t>(axis)] = total;

    int64_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= out_shape[static_cast<size_t>(i)];
    for (int i = axis + 1; i < nd; ++i) inner *= out_shape[static_cast<size_t>(i)];

    Tensor out(out_shape);
    double* op = out.data();
    int64_t offset = 0;
    for (const auto& p : parts) {
        const int64_t block = static_cast<int64_t>(p.shape()[static_cast<size_t>(axis)]) * inner;
        const double* pp = p.data();
        for (int64_t o = 0; o < outer; ++o)
            std::copy(pp + o * block, pp + (o + 1) * block, op + o * total * inner + offset);
        offset += block;
    }
    bool any_grad = false;
    std::vector<bool> needs;
    needs.reserve(parts.size());
    for (const auto& p : parts) {
        needs.push_back(p.requires_grad());
        any_grad = any_grad || p.requires_grad();
    }
    finalize("concat", out, any_grad, [=]() mutable {
        const double* g = out.grad_vec().data();
        int64_t off = 0;
        for (size_t pi = 0; pi < parts.size(); ++pi) {
            const int64_t block =
                static_cast<int64_t>(parts[pi].shape()[static_cast<size_t>(axis)]) * inner;
            if (needs[pi]) {
                double* gr = parts[pi].grad_vec().data();
                for (int64_t o = 0; o < outer; ++o) {
                    const double* src = g + o * total * inner + off;
                    double* dst = gr + o * block;
                    for (int64_t i = 0; i < block; ++i) dst[i] += src[i];
                }
            }
            off += block;
        }
    });
    return out;
}

Tensor narrow(const Tensor& x, int axis, int start, int length) {
    const int nd = x.dim();
    if (axis < 0) axis += nd;
    require(axis >= 0 && axis < nd, "narrow: axis out of range");
    const int extent = x.shape()[static_cast<size_t>(axis)];
    require(start >= 0 && length >= 1 && start + length <= extent,
            "narrow: range [" + std::to_string(start) + "," + std::to_string(start + length) +
                ") outside axis extent " + std::to_string(extent));
    Shape out_shape = x.shape();
    out_shape[static_cast<size_t>(axis)] = length;
    int64_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= x.shape()[static_cast<size_t>(i)];
    for (int i = axis + 1; i < nd; ++i) inner *= x.shape()[static_cast<size_t>(i)];

    Tensor out(out_shape);
    const double* xp = x.data();
    double* op = out.data();
    const int64_t src_block = static_cast<int64_t>(extent) * inner;
    const int64_t dst_block = static_cast<int64_t>(length) * inner;
    for (int64_t o = 0; o < outer; ++o)
        std::copy(xp + o * src_block + start * inner, xp + o * src_block + (start + length) * inner,
                  op + o * dst_block);
    const bool gx = x.requires_grad();
    finalize("narrow", out, gx, [=]() mutable {
        if (!gx) return;
        const double* g = out.grad_vec().data();
        double* gr = x.grad_vec().data();
        for (int64_t o = 0; o < outer; ++o) {
            const double* src = g + o * dst_block;
            double* dst = gr + o * src_block + start * inner;
            for (int64_t i = 0; i < dst_block; ++i) dst[i] += src[i];
        }
    });
    return out;
}

Tensor reshape(const Tensor& x, Shape new_shape) {
    require(shape_numel(new_shape) == x.numel(), "reshape: element count mismatch, " +
                                                     shape_str(x.shape()) + " -> " + shape_str(new_shape));
    Tensor out = Tensor::from_data(std::move(new_shape), x.data_vec());
    const bool gx = x.requires_grad();
    finalize("reshape", out, gx, [=]() mutable {
        if (gx) axpy(x.grad_vec(), out.grad_vec(), 1.0);
    });
    return out;
}

Tensor transpose2d(const Tensor& x) {
    require(x.dim() == 2, "transpose2d: expects 2-D input, got " + shape_str(x.shape()));
    const int r = x.size(0), c = x.size(1);
    Tensor out({c, r});
    const double* xp = x.data();
    double* op = out.data();
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) op[static_cast<int64_t>(j) * r + i] = xp[static_cast<int64_t>(i) * c + j];
    const bool gx = x.requires_grad();
    finalize("transpose2d", out, gx, [=]() mutable {
        if (!gx) return;
        const double* g = out.grad_vec().data();
        double* gr = x.grad_vec().data();
        for (int j = 0; j < c; ++j)
            for (int i = 0; i < r; ++i) gr[static_cast<int64_t>(i) * c + j] += g[static_cast<int64_t>(j) * r + i];
    });
    return out;
}

Tensor cross_entropy_mean(const Tensor& logits, const std::vector<int32_t>& labels, int void_label) {
    require(logits.dim() == 4, "cross_entropy: logits must be [N,CK,H,W], got " + shape_str(logits.shape()));
    const int n_batch = logits.size(0), ck = logits.size(1), h = logits.size(2), w = logits.size(3);
    const int64_t plane = static_cast<int64_t>(h) * w;
    require(static_cast<int64_t>(labels.size()) == static_cast<int64_t>(n_batch) * plane,
            "cross_entropy: label count " + std::to_string(labels.size()) + " does not match logits " +
                shape_str(logits.shape()));

    const double* xp = logits.data();
    double total = 0;
    int64_t valid = 0;
    for (int n = 0; n < n_batch; ++n) {
        const int64_t lbase = static_cast<int64_t>(n) * plane;
        const int64_t xbase = static_cast<int64_t>(n) * ck * plane;
        for (int64_t i = 0; i < plane; ++i) {
            const int32_t lab = labels[static_cast<size_t>(lbase + i)];
            if (lab == void_label) continue;
            require(lab >= 0 && lab < ck, "cross_entropy: label " + std::to_string(lab) +
                                              " outside class range [0," + std::to_string(ck) + ")");
            double mx = xp[xbase + i];
            for (int k = 1; k < ck; ++k) mx = std::max(mx, xp[xbase + static_cast<int64_t>(k) * plane + i]);
            double lse = 0;
            for (int k = 0; k < ck; ++k) lse += std::exp(xp[xbase + static_cast<int64_t>(k) * plane + i] - mx);
            lse = mx + std::log(lse);
            total += lse - xp[xbase + static_cast<int64_t>(lab) * plane + i];
            ++valid;
        }
    }
    if (valid == 0) {
        log_warn("cross_entropy: all pixels void; returning zero loss without gradient");
        return Tensor::scalar(0.0);
    }
    Tensor out = Tensor::scalar(total / static_cast<double>(valid));
    const bool gx = logits.requires_grad();
    // Keep a copy of the labels; callers may reuse their buffer.
    finalize("cross_entropy", out, gx, [=, labs = labels]() mutable {
        if (!gx) return;
        const double g = out.grad_vec()[0] / static_cast<double>(valid);
        auto& gr = logits.grad_vec();
        const double* xq = logits.data();
        for (int n = 0; n < n_batch; ++n) {
            const int64_t lbase = static_cast<int64_t>(n) * plane;
            const int64_t xbase = static_cast<int64_t>(n) * ck * plane;
            for (int64_t i = 0; i < plane; ++i) {
                const int32_t lab = labs[static_cast<size_t>(lbase + i)];
                if (lab == void_label) continue;
                double mx = xq[xbase + i];
                for (int k = 1; k < ck; ++k)
                    mx = std::max(mx, xq[xbase + static_cast<int64_t>(k) * plane + i]);
                double denom = 0;
                for (int k = 0; k < ck; ++k)
                    denom += std::exp(xq[xbase + static_cast<int64_t>(k) * plane + i] - mx);
                for (int k = 0; k < ck; ++k) {
                    const int64_t idx = xbase + static_cast<int64_t>(k) * plane + i;
                    const double p = std::exp(xq[idx] - mx) / denom;
                    gr[idx] += g * (p - (k == lab ? 1.0 : 0.0));
                }
            }
        }
    });
    return out;
}

Tensor bce_with_logits_mean(const Tensor& x, double target) {
    require(target == 0.0 || target == 1.0, "bce_with_logits: target must be 0 or 1");
    const double* xp = x.data();
    const int64_t n = x.numel();
    double total = 0;
    for (int64_t i = 0; i < n; ++i) {
        const double v = xp[i];
        // softplus(v) - target*v, evaluated stably
        total += std::max(v, 0.0) - target * v + std::log1p(std::exp(-std::abs(v)));
    }
    Tensor out = Tensor::scalar(total / static_cast<double>(n));
    const bool gx = x.requires_grad();
    finalize("bce_with_logits", out, gx, [=]() mutable {
        if (!gx) return;
        const double g = out.grad_vec()[0] / static_cast<double>(n);
        auto& gr = x.grad_vec();
        const double* xq = x.data();
        for (int64_t i = 0; i < n; ++i) {
            const double sig = 1.0 / (1.0 + std::exp(-xq[i]));
            gr[i] += g * (sig - target);
        }
    });
    return out;
}

}  // namespace ops

double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double eps) {
    Tensor probe = x.detach();
    probe.set_requires_grad(true);
    std::vector<double> analytic;
    {
        ScopedTape scope;
        const bool prev = finite_checks_enabled();
        set_finite_checks(true);
        try {
            Tensor y = f(probe);
            if (y.numel() != 1) throw std::invalid_argument("grad_check: program must be scalar-valued");
            scope.tape().backward(y);
        } catch (...) {
            set_finite_checks(prev);
            throw;
        }
        set_finite_checks(prev);
        analytic = probe.grad_vec();
    }

    double max_err = 0;
    const int64_t n = probe.numel();
    NoGradGuard no_grad;
    ScopedTape scratch;
    for (int64_t i = 0; i < n; ++i) {
        const double saved = probe.data()[i];
        probe.data()[i] = saved + eps;
        const double up = f(probe).item();
        probe.data()[i] = saved - eps;
        const double down = f(probe).item();
        probe.data()[i] = saved;
        const double numeric = (up - down) / (2 * eps);
        if (!std::isfinite(numeric)) {
            throw std::runtime_error("grad_check: non-finite numeric derivative at index " +
                                     std::to_string(i));
        }
        const double a = analytic[static_cast<size_t>(i)];
        const double err = std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)});
        max_err = std::max(max_err, err);
    }
    return max_err;
}

}  // namespace memadapt
