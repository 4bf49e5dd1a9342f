#include "memadapt/pseudo_label.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

namespace memadapt {

void ProbMap::validate() const {
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            double sum = 0;
            for (int k = 0; k < num_classes; ++k) {
                const double p = at(y, x, k);
                if (p < 0) throw std::invalid_argument("prob map: negative probability");
                sum += p;
            }
            if (std::abs(sum - 1.0) > 1e-6) {
                throw std::invalid_argument("prob map: pixel (" + std::to_string(y) + "," +
                                            std::to_string(x) + ") sums to " + std::to_string(sum));
            }
        }
    }
}

ProbMap ProbMap::from_tensor(const Tensor& prob) {
    Tensor t = prob;
    Shape shape = t.shape();
    if (shape.size() == 4) {
        if (shape[0] != 1) throw std::invalid_argument("prob map: expected a single sample");
        shape.erase(shape.begin());
    }
    if (shape.size() != 3) {
        throw std::invalid_argument("prob map: expected [CK,H,W], got " + shape_str(prob.shape()));
    }
    const int ck = shape[0], h = shape[1], w = shape[2];
    ProbMap out(h, w, ck);
    const double* p = t.data();
    const int64_t plane = static_cast<int64_t>(h) * w;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int k = 0; k < ck; ++k)
                out.at(y, x, k) = p[static_cast<int64_t>(k) * plane + static_cast<int64_t>(y) * w + x];
    return out;
}

LabelMap argmax_label(const ProbMap& prob) {
    LabelMap out(prob.height, prob.width);
    for (int y = 0; y < prob.height; ++y) {
        for (int x = 0; x < prob.width; ++x) {
            int best = 0;
            double best_p = prob.at(y, x, 0);
            for (int k = 1; k < prob.num_classes; ++k) {
                const double p = prob.at(y, x, k);
                if (p > best_p) {
                    best_p = p;
                    best = k;
                }
            }
            out.at(y, x) = best;
        }
    }
    return out;
}

EntropyMap entropy_map(const ProbMap& prob) {
    EntropyMap out;
    out.height = prob.height;
    out.width = prob.width;
    out.entropy.resize(static_cast<size_t>(prob.height) * prob.width);
    const double inv_log_ck = 1.0 / std::log(static_cast<double>(prob.num_classes));
    for (int y = 0; y < prob.height; ++y) {
        for (int x = 0; x < prob.width; ++x) {
            double e = 0;
            for (int k = 0; k < prob.num_classes; ++k) {
                const double p = prob.at(y, x, k);
                if (p > 0) e -= p * std::log(p);
            }
            out.entropy[static_cast<size_t>(y) * prob.width + x] = e * inv_log_ck;
        }
    }
    return out;
}

LabelMap entropy_filter(const LabelMap& labels, const EntropyMap& entropy, double sigma) {
    if (labels.height != entropy.height || labels.width != entropy.width) {
        throw std::invalid_argument("entropy_filter: map sizes disagree");
    }
    if (sigma < 0 || sigma > 1) throw std::invalid_argument("entropy_filter: sigma must be in [0,1]");
    LabelMap out = labels;
    for (int y = 0; y < labels.height; ++y)
        for (int x = 0; x < labels.width; ++x)
            if (entropy.at(y, x) > sigma) out.at(y, x) = kVoidLabel;
    return out;
}

LabelMap probability_filter(const LabelMap& labels, const ProbMap& prob, double threshold) {
    if (labels.height != prob.height || labels.width != prob.width) {
        throw std::invalid_argument("probability_filter: map sizes disagree");
    }
    if (threshold < 0 || threshold > 1) {
        throw std::invalid_argument("probability_filter: threshold must be in [0,1]");
    }
    LabelMap out = labels;
    for (int y = 0; y < labels.height; ++y) {
        for (int x = 0; x < labels.width; ++x) {
            double top = 0;
            for (int k = 0; k < prob.num_classes; ++k) top = std::max(top, prob.at(y, x, k));
            if (top < threshold) out.at(y, x) = kVoidLabel;
        }
    }
    return out;
}

void write_entropy_pgm(const EntropyMap& entropy, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open for writing: " + path);
    f << "P5\n" << entropy.width << ' ' << entropy.height << "\n255\n";
    for (double e : entropy.entropy) {
        const int v = static_cast<int>(std::lround(255.0 * std::min(1.0, std::max(0.0, e))));
        f.put(static_cast<char>(v));
    }
    if (!f) throw std::runtime_error("write failed: " + path);
}

}  // namespace memadapt
