#include "memadapt/losses.hpp"

#include <sstream>
#include <stdexcept>

#include "memadapt/ops.hpp"

namespace memadapt {

std::string LossReport::csv_header() { return "iteration,seg1,seg2,adv,d_loss,m_t,lr"; }

std::string LossReport::csv_row() const {
    std::ostringstream os;
    os.precision(17);
    os << iteration << ',' << seg1 << ',' << seg2 << ',' << adv << ',' << d_loss << ',' << m_t << ','
       << lr;
    return os.str();
}

Tensor seg_ce_loss(const Tensor& logits, const std::vector<LabelMap>& gt) {
    if (logits.dim() != 4 || static_cast<size_t>(logits.size(0)) != gt.size()) {
        throw std::invalid_argument("seg_ce_loss: logits " + shape_str(logits.shape()) +
                                    " do not match " + std::to_string(gt.size()) + " label maps");
    }
    const int h = logits.size(2), w = logits.size(3);
    std::vector<int32_t> packed;
    packed.reserve(gt.size() * static_cast<size_t>(h) * w);
    for (const auto& map : gt) {
        if (map.height != h || map.width != w) {
            throw std::invalid_argument("seg_ce_loss: label map " + std::to_string(map.height) + "x" +
                                        std::to_string(map.width) + " does not match logits " +
                                        std::to_string(h) + "x" + std::to_string(w));
        }
        packed.insert(packed.end(), map.labels.begin(), map.labels.end());
    }
    return ops::cross_entropy_mean(logits, packed, kVoidLabel);
}

Tensor adv_loss_target(const Tensor& d_out) { return ops::bce_with_logits_mean(d_out, 1.0); }

Tensor total_g1_loss(const Tensor& seg1, const Tensor& adv, double lambda_adv) {
    return ops::add(seg1, ops::scale(adv, lambda_adv));
}

Tensor d_loss(const Tensor& d_src, const Tensor& d_tgt) {
    return ops::add(ops::bce_with_logits_mean(d_src, 1.0), ops::bce_with_logits_mean(d_tgt, 0.0));
}

}  // namespace memadapt
