#include "memadapt/label_map.hpp"

#include <stdexcept>

namespace memadapt {

LabelMap downsample_majority(const LabelMap& labels, int factor, int num_classes) {
    if (factor < 1 || labels.height % factor != 0 || labels.width % factor != 0) {
        throw std::invalid_argument("downsample_majority: size not divisible by factor");
    }
    const int oh = labels.height / factor;
    const int ow = labels.width / factor;
    LabelMap out(oh, ow);
    std::vector<int> counts(static_cast<size_t>(num_classes) + 1, 0);  // last slot counts void
    for (int y = 0; y < oh; ++y) {
        for (int x = 0; x < ow; ++x) {
            std::fill(counts.begin(), counts.end(), 0);
            for (int dy = 0; dy < factor; ++dy) {
                for (int dx = 0; dx < factor; ++dx) {
                    const int32_t v = labels.at(y * factor + dy, x * factor + dx);
                    if (v == kVoidLabel)
                        ++counts[static_cast<size_t>(num_classes)];
                    else if (v >= 0 && v < num_classes)
                        ++counts[static_cast<size_t>(v)];
                    else
                        throw std::invalid_argument("downsample_majority: label outside class range");
                }
            }
            int best = -1, best_count = -1;
            bool tie = false;
            for (int k = 0; k <= num_classes; ++k) {
                if (counts[static_cast<size_t>(k)] > best_count) {
                    best_count = counts[static_cast<size_t>(k)];
                    best = k;
                    tie = false;
                } else if (counts[static_cast<size_t>(k)] == best_count) {
                    tie = true;
                }
            }
            out.at(y, x) = (tie || best == num_classes) ? kVoidLabel : best;
        }
    }
    return out;
}

}  // namespace memadapt
