#pragma once

#include <string>
#include <vector>

#include "memadapt/label_map.hpp"
#include "memadapt/tensor.hpp"

namespace memadapt {

/// H x W x C_K per-pixel probability simplex.
struct ProbMap {
    int height = 0;
    int width = 0;
    int num_classes = 0;
    std::vector<double> probs;  // pixel-major: [h][w][class]

    ProbMap() = default;
    ProbMap(int h, int w, int ck)
        : height(h), width(w), num_classes(ck), probs(static_cast<size_t>(h) * w * ck, 0.0) {}

    double at(int y, int x, int k) const {
        return probs[(static_cast<size_t>(y) * width + x) * num_classes + static_cast<size_t>(k)];
    }
    double& at(int y, int x, int k) {
        return probs[(static_cast<size_t>(y) * width + x) * num_classes + static_cast<size_t>(k)];
    }

    /// Throws unless every pixel is a nonnegative vector summing to 1 (1e-6).
    void validate() const;

    /// Converts one sample of a [CK,H,W] (or [1,CK,H,W]) probability tensor.
    static ProbMap from_tensor(const Tensor& prob);
};

/// H x W normalized entropies in [0,1].
struct EntropyMap {
    int height = 0;
    int width = 0;
    std::vector<double> entropy;

    double at(int y, int x) const { return entropy[static_cast<size_t>(y) * width + x]; }
};

/// Per-pixel argmax; ties break toward the lowest class index.
LabelMap argmax_label(const ProbMap& prob);

/// E = -(1/log C_K) sum_k p_k log p_k per pixel, with 0 log 0 := 0.
EntropyMap entropy_map(const ProbMap& prob);

/// Keeps labels where entropy <= sigma, voids the rest.
LabelMap entropy_filter(const LabelMap& labels, const EntropyMap& entropy, double sigma);

/// Keeps labels whose top probability is >= threshold, voids the rest.
LabelMap probability_filter(const LabelMap& labels, const ProbMap& prob, double threshold);

/// 8-bit grayscale PGM with value round(255*E), for visual inspection.
void write_entropy_pgm(const EntropyMap& entropy, const std::string& path);

}  // namespace memadapt
