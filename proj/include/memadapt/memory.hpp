#pragma once

#include <cstdint>
#include <vector>

#include "memadapt/label_map.hpp"
#include "memadapt/serialize.hpp"
#include "memadapt/tensor.hpp"

namespace memadapt {

/// Per-class pixel features gathered from a feature map: rows of the
/// class's pixel vectors, one matrix per class present.
struct ClassRepresentations {
    // entry k is an N_k x C row-major matrix; empty when class k is absent
    std::vector<std::vector<double>> rows;
    std::vector<int64_t> counts;
};

/// Gathers per-class feature rows from a [C,h,w] feature map under an h x w
/// label map; void pixels are excluded.
ClassRepresentations class_representations(const Tensor& feature, const LabelMap& labels,
                                           int num_classes);

/// Cosine similarities between each row of reps (N x C) and a prototype
/// vector (C). Zero-norm vectors yield similarity 0.
std::vector<double> cosine_similarity(const std::vector<double>& reps, int64_t n_rows,
                                      const std::vector<double>& prototype);

/// Dissimilarity-weighted pooling: weights (1-S_i)/sum_j(1-S_j). When every
/// similarity is exactly 1 the weights degenerate and the plain mean is used.
std::vector<double> pooled_representation(const std::vector<double>& reps, int64_t n_rows,
                                          const std::vector<double>& similarities);

/// Classwise store of prototype feature vectors, refreshed by a
/// similarity-weighted moving average with a polynomially annealed momentum.
/// Writes are detached from any autodiff tape.
class PrototypeMemory {
public:
    PrototypeMemory(int num_classes, int channels, int total_iters, double m0 = 0.9, double p = 0.9);

    int num_classes() const { return num_classes_; }
    int channels() const { return channels_; }
    int total_iters() const { return total_iters_; }
    double m0() const { return m0_; }
    double annealing_exponent() const { return p_; }

    bool is_initialized(int cls) const { return initialized_[static_cast<size_t>(cls)] != 0; }
    bool any_initialized() const;
    const std::vector<uint8_t>& initialized_flags() const { return initialized_; }

    /// Row view of class cls (length channels()).
    const double* row(int cls) const { return values_.data() + static_cast<int64_t>(cls) * channels_; }
    const std::vector<double>& values() const { return values_; }

    /// Copies the prototype matrix into a detached [C_K, C] tensor.
    Tensor values_tensor() const;

    /// m_t = (1 - t/T)^p (m0 - m0/100) + m0/100; t past T clamps with a warning.
    double momentum_at(int64_t t) const;

    /// Sets each present class's row to its mean feature vector; already
    /// initialized classes are left alone, absent classes untouched.
    void init_from_features(const Tensor& feature, const LabelMap& labels);

    /// Moving-average refresh at iteration t for every class present in the
    /// labels; present-but-uninitialized classes are seeded with their mean.
    void update(const Tensor& feature, const LabelMap& labels, int64_t t);

    void serialize(std::vector<NamedTensor>& out, const std::string& prefix) const;
    void load(const LoadedBlob& blob, const std::string& prefix);

private:
    int num_classes_;
    int channels_;
    int total_iters_;
    double m0_;
    double p_;
    std::vector<double> values_;        // C_K x C row-major
    std::vector<uint8_t> initialized_;  // per class
};

}  // namespace memadapt
