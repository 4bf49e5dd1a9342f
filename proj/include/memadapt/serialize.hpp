#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "memadapt/tensor.hpp"

namespace memadapt {

struct NamedTensor {
    std::string name;
    Tensor tensor;
};

/// Raw row-major little-endian blob plus a JSON sidecar manifest listing
/// name, shape, and byte offset per tensor. dtype is "f32" (the default
/// interchange format) or "f64" (used by checkpoints, which must restore
/// training state exactly).
void save_tensor_blob(const std::string& blob_path, const std::string& manifest_path,
                      const std::vector<NamedTensor>& tensors, bool use_f64 = false,
                      const nlohmann::json& extra = nlohmann::json::object());

struct LoadedBlob {
    std::vector<NamedTensor> tensors;
    nlohmann::json manifest;
    const Tensor& get(const std::string& name) const;
};

LoadedBlob load_tensor_blob(const std::string& blob_path, const std::string& manifest_path);

}  // namespace memadapt
