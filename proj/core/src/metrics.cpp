#include "malegs/metrics.hpp"

#include <stdexcept>

namespace malegs {

QueryMetrics metrics(const std::vector<uint8_t>& pred, const std::vector<uint8_t>& gt) {
    if (pred.size() != gt.size()) throw std::invalid_argument("metrics: shape mismatch");
    size_t tp = 0, fp = 0, fn = 0, tn = 0;
    for (size_t i = 0; i < pred.size(); ++i) {
        const bool p = pred[i] != 0;
        const bool g = gt[i] != 0;
        tp += p && g;
        fp += p && !g;
        fn += !p && g;
        tn += !p && !g;
    }
    QueryMetrics m;
    const size_t uni = tp + fp + fn;
    m.iou = uni == 0 ? 1.0 : static_cast<double>(tp) / uni;
    m.pixel_accuracy = pred.empty() ? 1.0 : static_cast<double>(tp + tn) / pred.size();
    m.precision = (tp + fp) == 0 ? 0.0 : static_cast<double>(tp) / (tp + fp);
    return m;
}

void SegMetrics::add(const std::string& label, const QueryMetrics& m) {
    per_query.emplace_back(label, m);
}

void SegMetrics::finalize() {
    miou = mpa = mp = 0.0;
    if (per_query.empty()) return;
    for (const auto& [label, m] : per_query) {
        miou += m.iou;
        mpa += m.pixel_accuracy;
        mp += m.precision;
    }
    miou /= per_query.size();
    mpa /= per_query.size();
    mp /= per_query.size();
}

}  // namespace malegs
