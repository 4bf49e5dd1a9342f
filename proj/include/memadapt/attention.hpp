#pragma once

#include <vector>

#include "memadapt/memory.hpp"
#include "memadapt/networks.hpp"
#include "memadapt/tensor.hpp"

namespace memadapt {

/// Per-location SoftMax over class-prototype logits. q: [C,H,W]; k: [C_K,C]
/// with rows of uninitialized classes masked to exactly zero attention.
/// Rejects the all-masked case.
Tensor affinity(const Tensor& q, const Tensor& k, const std::vector<uint8_t>& class_mask);

/// Fuses prototype memory into a feature map: attention-weighted prototype
/// mixtures are projected, concatenated with the input feature, and mapped
/// back to C channels. With no initialized class the attention branch is
/// identically zero and only the fusion path runs.
class Aggregator : public ModuleBase {
public:
    Aggregator(const NetworkSpec& spec, Rng& rng);

    /// feature: [N,C,H',W'] -> [N,C,H',W'].
    Tensor forward(const Tensor& feature, const PrototypeMemory& memory) const;

    /// Row-wise projections of the prototype matrix (each class treated as a
    /// spatial position of a 1x1 conv). m: [C_K,C'] -> [C_K,C].
    Tensor project_keys(const Tensor& m) const { return project_rows(k_proj_, m); }
    Tensor project_values(const Tensor& m) const { return project_rows(v_proj_, m); }
    Tensor project_query(const Tensor& feature) const { return q_proj_.forward(feature); }

protected:
    void collect_all(std::vector<NamedTensor>& params, std::vector<NamedTensor>* state) const override;

private:
    Tensor project_rows(const Conv2dLayer& proj, const Tensor& m) const;

    Conv2dLayer q_proj_, k_proj_, v_proj_;
    ConvBnRelu phi_;    // attention branch mapping, 1x1
    ConvBnRelu theta_;  // fusion mapping on the concatenated feature, 1x1
    int channels_;
};

}  // namespace memadapt
