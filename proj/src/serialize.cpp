#include "memadapt/serialize.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace memadapt {

static_assert(std::endian::native == std::endian::little, "blob format is little-endian");

void save_tensor_blob(const std::string& blob_path, const std::string& manifest_path,
                      const std::vector<NamedTensor>& tensors, bool use_f64,
                      const nlohmann::json& extra) {
    std::ofstream blob(blob_path, std::ios::binary);
    if (!blob) throw std::runtime_error("cannot open for writing: " + blob_path);

    nlohmann::json manifest = extra;
    manifest["format"] = "memadapt-tensors-v1";
    manifest["tensors"] = nlohmann::json::array();

    uint64_t offset = 0;
    for (const auto& nt : tensors) {
        nlohmann::json entry;
        entry["name"] = nt.name;
        entry["shape"] = nt.tensor.shape();
        entry["offset"] = offset;
        entry["dtype"] = use_f64 ? "f64" : "f32";
        manifest["tensors"].push_back(entry);

        const int64_t n = nt.tensor.numel();
        if (use_f64) {
            blob.write(reinterpret_cast<const char*>(nt.tensor.data()), n * 8);
            offset += static_cast<uint64_t>(n) * 8;
        } else {
            std::vector<float> buf(static_cast<size_t>(n));
            for (int64_t i = 0; i < n; ++i) buf[static_cast<size_t>(i)] = static_cast<float>(nt.tensor.data()[i]);
            blob.write(reinterpret_cast<const char*>(buf.data()), n * 4);
            offset += static_cast<uint64_t>(n) * 4;
        }
    }
    if (!blob) throw std::runtime_error("write failed: " + blob_path);
    blob.close();

    std::ofstream mf(manifest_path);
    if (!mf) throw std::runtime_error("cannot open for writing: " + manifest_path);
    mf << manifest.dump(2) << '\n';
    if (!mf) throw std::runtime_error("write failed: " + manifest_path);
}

const Tensor& LoadedBlob::get(const std::string& name) const {
    for (const auto& nt : tensors)
        if (nt.name == name) return nt.tensor;
    throw std::runtime_error("tensor blob: missing entry '" + name + "'");
}

LoadedBlob load_tensor_blob(const std::string& blob_path, const std::string& manifest_path) {
    std::ifstream mf(manifest_path);
    if (!mf) throw std::runtime_error("cannot open: " + manifest_path);
    nlohmann::json manifest;
    try {
        mf >> manifest;
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("malformed manifest " + manifest_path + ": " + e.what());
    }
    if (manifest.value("format", "") != "memadapt-tensors-v1") {
        throw std::runtime_error("unrecognized manifest format in " + manifest_path);
    }

    std::ifstream blob(blob_path, std::ios::binary);
    if (!blob) throw std::runtime_error("cannot open: " + blob_path);

    LoadedBlob out;
    out.manifest = manifest;
    for (const auto& entry : manifest.at("tensors")) {
        const std::string name = entry.at("name").get<std::string>();
        const Shape shape = entry.at("shape").get<Shape>();
        const uint64_t offset = entry.at("offset").get<uint64_t>();
        const std::string dtype = entry.value("dtype", "f32");
        const int64_t n = shape_numel(shape);

        blob.seekg(static_cast<std::streamoff>(offset));
        std::vector<double> values(static_cast<size_t>(n));
        if (dtype == "f64") {
            blob.read(reinterpret_cast<char*>(values.data()), n * 8);
        } else if (dtype == "f32") {
            std::vector<float> buf(static_cast<size_t>(n));
            blob.read(reinterpret_cast<char*>(buf.data()), n * 4);
            for (int64_t i = 0; i < n; ++i) values[static_cast<size_t>(i)] = buf[static_cast<size_t>(i)];
        } else {
            throw std::runtime_error("tensor '" + name + "': unknown dtype '" + dtype + "'");
        }
        if (!blob) {
            throw std::runtime_error("tensor '" + name + "': truncated payload in " + blob_path +
                                     " at offset " + std::to_string(offset));
        }
        out.tensors.push_back({name, Tensor::from_data(shape, std::move(values))});
    }
    return out;
}

}  // namespace memadapt
