#include "memadapt/memory.hpp"

#include <cmath>
#include <stdexcept>

#include "memadapt/log.hpp"

namespace memadapt {

ClassRepresentations class_representations(const Tensor& feature, const LabelMap& labels,
                                           int num_classes) {
    if (feature.dim() != 3) {
        throw std::invalid_argument("class_representations: feature must be [C,h,w], got " +
                                    shape_str(feature.shape()));
    }
    const int c = feature.size(0), h = feature.size(1), w = feature.size(2);
    if (labels.height != h || labels.width != w) {
        throw std::invalid_argument("class_representations: label map " + std::to_string(labels.height) +
                                    "x" + std::to_string(labels.width) + " does not match feature " +
                                    std::to_string(h) + "x" + std::to_string(w));
    }
    ClassRepresentations reps;
    reps.rows.resize(static_cast<size_t>(num_classes));
    reps.counts.assign(static_cast<size_t>(num_classes), 0);
    const double* f = feature.data();
    const int64_t plane = static_cast<int64_t>(h) * w;
    for (int64_t i = 0; i < plane; ++i) {
        const int32_t lab = labels.labels[static_cast<size_t>(i)];
        if (lab == kVoidLabel) continue;
        if (lab < 0 || lab >= num_classes) {
            throw std::invalid_argument("class_representations: label " + std::to_string(lab) +
                                        " outside class range");
        }
        auto& rows = reps.rows[static_cast<size_t>(lab)];
        const size_t base = rows.size();
        rows.resize(base + static_cast<size_t>(c));
        for (int ch = 0; ch < c; ++ch) rows[base + static_cast<size_t>(ch)] = f[ch * plane + i];
        ++reps.counts[static_cast<size_t>(lab)];
    }
    return reps;
}

std::vector<double> cosine_similarity(const std::vector<double>& reps, int64_t n_rows,
                                      const std::vector<double>& prototype) {
    const int64_t c = static_cast<int64_t>(prototype.size());
    if (static_cast<int64_t>(reps.size()) != n_rows * c) {
        throw std::invalid_argument("cosine_similarity: row matrix size mismatch");
    }
    double proto_norm = 0;
    for (double v : prototype) proto_norm += v * v;
    proto_norm = std::sqrt(proto_norm);

    std::vector<double> sims(static_cast<size_t>(n_rows), 0.0);
    bool warned = false;
    for (int64_t i = 0; i < n_rows; ++i) {
        const double* r = reps.data() + i * c;
        double dot = 0, norm = 0;
        for (int64_t k = 0; k < c; ++k) {
            dot += r[k] * prototype[static_cast<size_t>(k)];
            norm += r[k] * r[k];
        }
        norm = std::sqrt(norm);
        const double denom = norm * proto_norm;
        if (denom < 1e-12) {
            sims[static_cast<size_t>(i)] = 0.0;
            if (!warned) {
                log_warn("cosine_similarity: zero-norm vector, similarity set to 0");
                warned = true;
            }
        } else {
            sims[static_cast<size_t>(i)] = dot / denom;
        }
    }
    return sims;
}

std::vector<double> pooled_representation(const std::vector<double>& reps, int64_t n_rows,
                                          const std::vector<double>& similarities) {
    if (n_rows < 1) throw std::invalid_argument("pooled_representation: needs at least one row");
    const int64_t c = static_cast<int64_t>(reps.size()) / n_rows;
    if (static_cast<int64_t>(similarities.size()) != n_rows) {
        throw std::invalid_argument("pooled_representation: similarity count mismatch");
    }
    double denom = 0;
    for (double s : similarities) denom += 1.0 - s;

    std::vector<double> pooled(static_cast<size_t>(c), 0.0);
    if (denom == 0.0) {
        log_warn("pooled_representation: all similarities exactly 1, falling back to uniform mean");
        const double w = 1.0 / static_cast<double>(n_rows);
        for (int64_t i = 0; i < n_rows; ++i) {
            const double* r = reps.data() + i * c;
            for (int64_t k = 0; k < c; ++k) pooled[static_cast<size_t>(k)] += w * r[k];
        }
        return pooled;
    }
    for (int64_t i = 0; i < n_rows; ++i) {
        const double w = (1.0 - similarities[static_cast<size_t>(i)]) / denom;
        const double* r = reps.data() + i * c;
        for (int64_t k = 0; k < c; ++k) pooled[static_cast<size_t>(k)] += w * r[k];
    }
    return pooled;
}

PrototypeMemory::PrototypeMemory(int num_classes, int channels, int total_iters, double m0, double p)
    : num_classes_(num_classes),
      channels_(channels),
      total_iters_(total_iters),
      m0_(m0),
      p_(p),
      values_(static_cast<size_t>(num_classes) * static_cast<size_t>(channels), 0.0),
      initialized_(static_cast<size_t>(num_classes), 0) {
    if (num_classes < 1 || channels < 1 || total_iters < 1) {
        throw std::invalid_argument("prototype memory: invalid dimensions");
    }
}

bool PrototypeMemory::any_initialized() const {
    for (uint8_t f : initialized_)
        if (f) return true;
    return false;
}

Tensor PrototypeMemory::values_tensor() const {
    return Tensor::from_data({num_classes_, channels_}, values_);
}

double PrototypeMemory::momentum_at(int64_t t) const {
    if (t < 0) throw std::invalid_argument("momentum_at: negative iteration");
    if (t > total_iters_) {
        log_warn("momentum_at: iteration " + std::to_string(t) + " past schedule end " +
                 std::to_string(total_iters_) + ", clamping");
        t = total_iters_;
    }
    const double floor = m0_ / 100.0;
    return std::pow(1.0 - static_cast<double>(t) / static_cast<double>(total_iters_), p_) * (m0_ - floor) +
           floor;
}

namespace {

std::vector<double> class_mean(const std::vector<double>& rows, int64_t n_rows, int64_t c) {
    std::vector<double> mean(static_cast<size_t>(c), 0.0);
    for (int64_t i = 0; i < n_rows; ++i)
        for (int64_t k = 0; k < c; ++k) mean[static_cast<size_t>(k)] += rows[static_cast<size_t>(i * c + k)];
    for (auto& v : mean) v /= static_cast<double>(n_rows);
    return mean;
}

}  // namespace

void PrototypeMemory::init_from_features(const Tensor& feature, const LabelMap& labels) {
    const ClassRepresentations reps = class_representations(feature, labels, num_classes_);
    for (int k = 0; k < num_classes_; ++k) {
        if (reps.counts[static_cast<size_t>(k)] == 0 || initialized_[static_cast<size_t>(k)]) continue;
        const auto mean =
            class_mean(reps.rows[static_cast<size_t>(k)], reps.counts[static_cast<size_t>(k)], channels_);
        std::copy(mean.begin(), mean.end(), values_.begin() + static_cast<int64_t>(k) * channels_);
        initialized_[static_cast<size_t>(k)] = 1;
    }
}

void PrototypeMemory::update(const Tensor& feature, const LabelMap& labels, int64_t t) {
    const double m = momentum_at(t);
    const ClassRepresentations reps = class_representations(feature, labels, num_classes_);
    for (int k = 0; k < num_classes_; ++k) {
        const int64_t n = reps.counts[static_cast<size_t>(k)];
        if (n == 0) continue;  // absent classes stay bitwise unchanged
        const auto& rows = reps.rows[static_cast<size_t>(k)];
        double* proto = values_.data() + static_cast<int64_t>(k) * channels_;
        if (!initialized_[static_cast<size_t>(k)]) {
            const auto mean = class_mean(rows, n, channels_);
            std::copy(mean.begin(), mean.end(), proto);
            initialized_[static_cast<size_t>(k)] = 1;
            continue;
        }
        const std::vector<double> proto_vec(proto, proto + channels_);
        const auto sims = cosine_similarity(rows, n, proto_vec);
        const auto pooled = pooled_representation(rows, n, sims);
        for (int c = 0; c < channels_; ++c)
            proto[c] = (1.0 - m) * proto[c] + m * pooled[static_cast<size_t>(c)];
    }
}

void PrototypeMemory::serialize(std::vector<NamedTensor>& out, const std::string& prefix) const {
    out.push_back({prefix + "values", values_tensor()});
    std::vector<double> flags(initialized_.begin(), initialized_.end());
    out.push_back({prefix + "initialized", Tensor::from_data({num_classes_}, std::move(flags))});
    out.push_back({prefix + "schedule",
                   Tensor::from_data({3}, {m0_, p_, static_cast<double>(total_iters_)})});
}

void PrototypeMemory::load(const LoadedBlob& blob, const std::string& prefix) {
    const Tensor& vals = blob.get(prefix + "values");
    if (vals.shape() != Shape{num_classes_, channels_}) {
        throw std::runtime_error("prototype memory: stored shape " + shape_str(vals.shape()) +
                                 " does not match " + shape_str({num_classes_, channels_}));
    }
    values_ = vals.data_vec();
    const Tensor& flags = blob.get(prefix + "initialized");
    for (int k = 0; k < num_classes_; ++k)
        initialized_[static_cast<size_t>(k)] = flags.data()[k] != 0.0 ? 1 : 0;
    const Tensor& sched = blob.get(prefix + "schedule");
    m0_ = sched.data()[0];
    p_ = sched.data()[1];
    total_iters_ = static_cast<int>(sched.data()[2]);
}

}  // namespace memadapt
