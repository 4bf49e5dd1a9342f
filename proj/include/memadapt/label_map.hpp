#pragma once

#include <cstdint>
#include <vector>

namespace memadapt {

/// Reserved "no label" value; matches 8-bit raster conventions.
inline constexpr int kVoidLabel = 255;

/// H x W integer class map. Values lie in [0, num_classes) or kVoidLabel.
struct LabelMap {
    int height = 0;
    int width = 0;
    std::vector<int32_t> labels;  // row-major

    LabelMap() = default;
    LabelMap(int h, int w, int32_t fill = kVoidLabel)
        : height(h), width(w), labels(static_cast<size_t>(h) * static_cast<size_t>(w), fill) {}

    int32_t at(int y, int x) const { return labels[static_cast<size_t>(y) * width + x]; }
    int32_t& at(int y, int x) { return labels[static_cast<size_t>(y) * width + x]; }
    int64_t numel() const { return static_cast<int64_t>(labels.size()); }

    bool operator==(const LabelMap& other) const {
        return height == other.height && width == other.width && labels == other.labels;
    }
};

/// Majority vote over non-overlapping factor x factor cells; ties become void.
LabelMap downsample_majority(const LabelMap& labels, int factor, int num_classes);

}  // namespace memadapt
