#pragma once

#include <string>
#include <vector>

#include "memadapt/label_map.hpp"
#include "memadapt/tensor.hpp"

namespace memadapt {

/// Scalar loss values recorded per training iteration.
struct LossReport {
    int64_t iteration = 0;
    double seg1 = 0;
    double seg2 = 0;
    double adv = 0;
    double d_loss = 0;
    double m_t = 0;
    double lr = 0;

    static std::string csv_header();
    std::string csv_row() const;
};

/// Mean cross-entropy of softmax(logits) against the batch of label maps;
/// void pixels contribute to neither numerator nor denominator.
Tensor seg_ce_loss(const Tensor& logits, const std::vector<LabelMap>& gt);

/// Generator-side adversarial objective: push D's output on target
/// predictions toward the source label (1).
Tensor adv_loss_target(const Tensor& d_out);

/// seg1 + lambda_adv * adv.
Tensor total_g1_loss(const Tensor& seg1, const Tensor& adv, double lambda_adv);

/// Two-sided discriminator objective: source patches toward 1, target
/// patches toward 0.
Tensor d_loss(const Tensor& d_src, const Tensor& d_tgt);

}  // namespace memadapt
