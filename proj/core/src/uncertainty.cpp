#include "malegs/uncertainty.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace malegs {

UncertaintyMap appearance_uncertainty(const std::vector<const Grid*>& features) {
    if (features.empty()) throw std::invalid_argument("appearance_uncertainty: no maps");
    const Grid& first = *features[0];
    for (const auto* f : features)
        if (!f->same_shape(first))
            throw std::invalid_argument("appearance_uncertainty: shape mismatch");

    const int n = static_cast<int>(features.size());
    const int k = first.channels();
    UncertaintyMap u{Grid(first.height(), first.width(), 1), UncertaintyKind::Appearance, false};

    std::vector<double> mean(k);
    for (int y = 0; y < first.height(); ++y) {
        for (int x = 0; x < first.width(); ++x) {
            const size_t off = (static_cast<size_t>(y) * first.width() + x) * k;
            std::fill(mean.begin(), mean.end(), 0.0);
            for (const auto* f : features) {
                const float* p = f->data() + off;
                for (int c = 0; c < k; ++c) mean[c] += p[c];
            }
            for (int c = 0; c < k; ++c) mean[c] /= n;
            double acc = 0.0;
            for (const auto* f : features) {
                const float* p = f->data() + off;
                for (int c = 0; c < k; ++c) {
                    const double d = p[c] - mean[c];
                    acc += d * d;
                }
            }
            u.values.at(y, x, 0) = static_cast<float>(acc / n);
        }
    }
    return u;
}

UncertaintyMap appearance_uncertainty(const std::vector<Grid>& features) {
    std::vector<const Grid*> ptrs;
    ptrs.reserve(features.size());
    for (const auto& f : features) ptrs.push_back(&f);
    return appearance_uncertainty(ptrs);
}

UncertaintyMap transient_uncertainty(const Grid& self_render, const Grid& original) {
    if (!self_render.same_shape(original))
        throw std::invalid_argument("transient_uncertainty: shape mismatch");
    const int k = self_render.channels();
    UncertaintyMap u{Grid(self_render.height(), self_render.width(), 1),
                     UncertaintyKind::Transient, false};
    for (int y = 0; y < self_render.height(); ++y) {
        for (int x = 0; x < self_render.width(); ++x) {
            const size_t off = (static_cast<size_t>(y) * self_render.width() + x) * k;
            const float* a = self_render.data() + off;
            const float* b = original.data() + off;
            double acc = 0.0;
            for (int c = 0; c < k; ++c) {
                const double d = static_cast<double>(a[c]) - b[c];
                acc += d * d;
            }
            u.values.at(y, x, 0) = static_cast<float>(acc);
        }
    }
    return u;
}

void normalize_maps(std::vector<UncertaintyMap>& maps) {
    if (maps.empty()) throw std::invalid_argument("normalize_maps: no maps");
    const UncertaintyKind kind = maps.front().kind;
    double lo = std::numeric_limits<double>::infinity();
    double hi = -std::numeric_limits<double>::infinity();
    for (const auto& m : maps) {
        if (m.kind != kind) throw std::invalid_argument("normalize_maps: mixed kinds");
        for (size_t i = 0; i < m.values.size(); ++i) {
            lo = std::min(lo, static_cast<double>(m.values.data()[i]));
            hi = std::max(hi, static_cast<double>(m.values.data()[i]));
        }
    }
    const double span = hi - lo;
    for (auto& m : maps) {
        for (size_t i = 0; i < m.values.size(); ++i) {
            float& v = m.values.data()[i];
            v = span > 0.0 ? static_cast<float>((v - lo) / span) : 0.0f;
        }
        m.normalized = true;
    }
}

std::vector<uint8_t> occluder_mask(const UncertaintyMap& u, double tau_u) {
    if (tau_u < 0.0 || tau_u > 1.0)
        throw std::invalid_argument("occluder_mask: tau_u outside [0,1]");
    if (!u.normalized) throw std::invalid_argument("occluder_mask: map not normalized");
    std::vector<uint8_t> mask(u.values.size());
    for (size_t i = 0; i < mask.size(); ++i)
        mask[i] = u.values.data()[i] > tau_u ? 1 : 0;
    return mask;
}

}  // namespace malegs
