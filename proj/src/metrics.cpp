#include "memadapt/metrics.hpp"

#include <sstream>
#include <stdexcept>

namespace memadapt {

ConfusionMatrix::ConfusionMatrix(int num_classes)
    : num_classes_(num_classes),
      counts_(static_cast<size_t>(num_classes) * static_cast<size_t>(num_classes), 0),
      rejected_(static_cast<size_t>(num_classes), 0) {
    if (num_classes < 1) throw std::invalid_argument("confusion matrix: need at least one class");
}

int64_t ConfusionMatrix::total_pixels() const {
    int64_t total = 0;
    for (int64_t v : counts_) total += v;
    for (int64_t v : rejected_) total += v;
    return total;
}

void ConfusionMatrix::accumulate(const LabelMap& pred, const LabelMap& gt) {
    if (pred.height != gt.height || pred.width != gt.width) {
        throw std::invalid_argument("confusion matrix: prediction " + std::to_string(pred.height) + "x" +
                                    std::to_string(pred.width) + " does not match ground truth " +
                                    std::to_string(gt.height) + "x" + std::to_string(gt.width));
    }
    for (size_t i = 0; i < gt.labels.size(); ++i) {
        const int32_t t = gt.labels[i];
        if (t == kVoidLabel) continue;
        if (t < 0 || t >= num_classes_) {
            throw std::invalid_argument("confusion matrix: ground-truth label " + std::to_string(t) +
                                        " outside class range");
        }
        const int32_t p = pred.labels[i];
        if (p == kVoidLabel) {
            ++rejected_[static_cast<size_t>(t)];
        } else if (p < 0 || p >= num_classes_) {
            throw std::invalid_argument("confusion matrix: predicted label " + std::to_string(p) +
                                        " outside class range");
        } else {
            ++counts_[static_cast<size_t>(t) * num_classes_ + static_cast<size_t>(p)];
        }
    }
}

void ConfusionMatrix::add(int true_cls, int pred_cls, int64_t n) {
    counts_[static_cast<size_t>(true_cls) * num_classes_ + static_cast<size_t>(pred_cls)] += n;
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
    if (other.num_classes_ != num_classes_) {
        throw std::invalid_argument("confusion matrix: class count mismatch in merge");
    }
    for (size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
    for (size_t i = 0; i < rejected_.size(); ++i) rejected_[i] += other.rejected_[i];
}

std::vector<ClassScores> ConfusionMatrix::per_class() const {
    std::vector<ClassScores> scores(static_cast<size_t>(num_classes_));
    for (int c = 0; c < num_classes_; ++c) {
        int64_t row = 0, col = 0;
        for (int j = 0; j < num_classes_; ++j) {
            row += count(c, j);
            col += count(j, c);
        }
        const int64_t diag = count(c, c);
        auto& s = scores[static_cast<size_t>(c)];
        // Rejected pixels of this class still count as missed ground truth.
        const int64_t support = row + rejected(c);
        s.empty = support == 0 && col == 0;
        s.precision = col > 0 ? static_cast<double>(diag) / static_cast<double>(col) : 0.0;
        s.recall = support > 0 ? static_cast<double>(diag) / static_cast<double>(support) : 0.0;
        s.f1 = (s.precision + s.recall) > 0 ? 2.0 * s.precision * s.recall / (s.precision + s.recall)
                                            : 0.0;
        const int64_t uni = support + col - diag;
        s.iou = uni > 0 ? static_cast<double>(diag) / static_cast<double>(uni) : 0.0;
    }
    return scores;
}

std::vector<double> ConfusionMatrix::per_class_f1() const {
    std::vector<double> f1;
    for (const auto& s : per_class()) f1.push_back(s.f1);
    return f1;
}

MetricSummary ConfusionMatrix::summary() const {
    MetricSummary out;
    out.pixels = total_pixels();
    if (out.pixels == 0) return out;  // all metrics undefined
    out.defined = true;

    int64_t diag = 0;
    for (int c = 0; c < num_classes_; ++c) diag += count(c, c);
    out.oa = static_cast<double>(diag) / static_cast<double>(out.pixels);

    const auto scores = per_class();
    double recall_sum = 0, iou_sum = 0;
    int recall_n = 0, iou_n = 0;
    for (int c = 0; c < num_classes_; ++c) {
        int64_t support = rejected(c);
        int64_t col = 0;
        for (int j = 0; j < num_classes_; ++j) {
            support += count(c, j);
            col += count(j, c);
        }
        const bool in_ma = support > 0;
        const bool in_miou = support + col > 0;
        if (in_ma) {
            recall_sum += scores[static_cast<size_t>(c)].recall;
            ++recall_n;
        }
        if (in_miou) {
            iou_sum += scores[static_cast<size_t>(c)].iou;
            ++iou_n;
        }
        if (!in_ma && !in_miou) out.excluded_classes.push_back(c);
    }
    out.ma = recall_n > 0 ? recall_sum / recall_n : 0.0;
    out.miou = iou_n > 0 ? iou_sum / iou_n : 0.0;
    return out;
}

nlohmann::json ConfusionMatrix::to_json(const std::vector<std::string>& class_names) const {
    nlohmann::json j;
    const auto scores = per_class();
    const auto sum = summary();
    nlohmann::json per;
    for (int c = 0; c < num_classes_; ++c) {
        const std::string key = c < static_cast<int>(class_names.size()) ? class_names[static_cast<size_t>(c)]
                                                                         : "class_" + std::to_string(c);
        const auto& s = scores[static_cast<size_t>(c)];
        per[key] = {{"precision", s.precision},
                    {"recall", s.recall},
                    {"f1", s.f1},
                    {"iou", s.iou},
                    {"empty", s.empty}};
    }
    j["per_class"] = per;
    if (sum.defined) {
        j["OA"] = sum.oa;
        j["MA"] = sum.ma;
        j["mIoU"] = sum.miou;
    } else {
        j["OA"] = nullptr;
        j["MA"] = nullptr;
        j["mIoU"] = nullptr;
    }
    j["pixels"] = sum.pixels;
    j["excluded_classes"] = sum.excluded_classes;
    return j;
}

std::string ConfusionMatrix::to_csv() const {
    std::ostringstream os;
    os << "true\\pred";
    for (int j = 0; j < num_classes_; ++j) os << ',' << j;
    os << ",rejected\n";
    for (int i = 0; i < num_classes_; ++i) {
        os << i;
        for (int j = 0; j < num_classes_; ++j) os << ',' << count(i, j);
        os << ',' << rejected(i) << '\n';
    }
    return os.str();
}

}  // namespace memadapt
