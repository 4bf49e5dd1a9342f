#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "memadapt/label_map.hpp"

namespace memadapt {

struct ClassScores {
    double precision = 0;
    double recall = 0;
    double f1 = 0;
    double iou = 0;
    bool empty = false;  // no ground truth and no predictions
};

struct MetricSummary {
    double oa = 0;
    double ma = 0;
    double miou = 0;
    bool defined = false;  // false when no pixels were accumulated
    int64_t pixels = 0;
    std::vector<int> excluded_classes;  // left out of the MA/mIoU means
};

/// counts[i][j] = pixels of true class i predicted as class j. Predicted-void
/// pixels land in a separate rejected column: they stay out of the per-class
/// scores but count as wrong in OA.
class ConfusionMatrix {
public:
    explicit ConfusionMatrix(int num_classes);

    int num_classes() const { return num_classes_; }
    int64_t count(int true_cls, int pred_cls) const {
        return counts_[static_cast<size_t>(true_cls) * num_classes_ + static_cast<size_t>(pred_cls)];
    }
    int64_t rejected(int true_cls) const { return rejected_[static_cast<size_t>(true_cls)]; }
    int64_t total_pixels() const;

    /// Counts every pixel whose ground truth is not void. Shapes must match.
    void accumulate(const LabelMap& pred, const LabelMap& gt);
    void add(int true_cls, int pred_cls, int64_t n = 1);

    void merge(const ConfusionMatrix& other);

    std::vector<ClassScores> per_class() const;
    std::vector<double> per_class_f1() const;
    MetricSummary summary() const;

    nlohmann::json to_json(const std::vector<std::string>& class_names = {}) const;
    std::string to_csv() const;

private:
    int num_classes_;
    std::vector<int64_t> counts_;
    std::vector<int64_t> rejected_;
};

}  // namespace memadapt
