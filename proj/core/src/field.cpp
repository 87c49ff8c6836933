#include "malegs/field.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>
#include <unordered_map>

namespace malegs {

ViewTargets build_targets(const MlpParams& encoder_params,
                          const std::vector<const Grid*>& feature_maps, const Grid& u_appearance,
                          const Grid& u_transient, int view_index) {
    if (feature_maps.empty()) throw std::invalid_argument("build_targets: no feature maps");
    const int d = encoder_params.input_dim();
    const int c = encoder_params.latent_dim();

    ViewTargets out;
    out.view_index = view_index;
    out.u_appearance = u_appearance;
    out.u_transient = u_transient;

    for (const Grid* fm : feature_maps) {
        if (fm->channels() != d) throw std::invalid_argument("build_targets: feature dim mismatch");
        const size_t npx = static_cast<size_t>(fm->height()) * fm->width();

        // Oracle features are block-constant, so encode each distinct
        // feature vector once and fan the latent back out.
        std::unordered_map<std::string, int> unique;
        std::vector<int> pixel_code(npx);
        std::vector<const float*> reps;
        for (size_t p = 0; p < npx; ++p) {
            const float* f = fm->data() + p * d;
            std::string key(reinterpret_cast<const char*>(f), sizeof(float) * d);
            auto [it, inserted] = unique.emplace(std::move(key), static_cast<int>(reps.size()));
            if (inserted) reps.push_back(f);
            pixel_code[p] = it->second;
        }

        Eigen::MatrixXd feats(d, reps.size());
        for (size_t u = 0; u < reps.size(); ++u)
            for (int i = 0; i < d; ++i) feats(i, u) = reps[u][i];
        const Eigen::MatrixXd latents = encode(encoder_params, feats);

        Grid lat(fm->height(), fm->width(), c);
        for (size_t p = 0; p < npx; ++p) {
            float* o = lat.data() + p * c;
            const auto col = latents.col(pixel_code[p]);
            for (int i = 0; i < c; ++i) o[i] = static_cast<float>(col[i]);
        }
        out.latents.push_back(std::move(lat));
    }
    return out;
}

FieldLossResult field_loss(const Scene& scene, const PreparedView& view,
                           const ViewTargets& targets) {
    if (static_cast<int>(targets.latents.size()) != scene.num_slots)
        throw std::invalid_argument("field_loss: slot count mismatch");
    const int c = scene.feature_dim_low;
    const size_t npx = static_cast<size_t>(view.height) * view.width;
    for (const auto& t : targets.latents)
        if (t.height() != view.height || t.width() != view.width || t.channels() != c)
            throw std::invalid_argument("field_loss: target shape mismatch");
    if (targets.u_appearance.size() != npx || targets.u_transient.size() != npx)
        throw std::invalid_argument("field_loss: uncertainty shape mismatch");

    std::vector<double> mask(npx);
    for (size_t p = 0; p < npx; ++p)
        mask[p] = (1.0 - targets.u_appearance.data()[p]) * (1.0 - targets.u_transient.data()[p]);

    FieldLossResult result;
    result.slot_grads.resize(scene.num_slots);
    std::vector<double> accum, transmittance, upstream(npx * c);
    for (int slot = 0; slot < scene.num_slots; ++slot) {
        composite(view, lang_slot_channels(scene, slot), accum, transmittance);
        const Grid& target = targets.latents[slot];
        for (size_t p = 0; p < npx; ++p) {
            for (int i = 0; i < c; ++i) {
                const double r = accum[p * c + i] - target.data()[p * c + i];
                result.loss += mask[p] * std::abs(r);
                upstream[p * c + i] = mask[p] * (r > 0.0 ? 1.0 : (r < 0.0 ? -1.0 : 0.0));
            }
        }
        result.slot_grads[slot] = composite_backward(
            view, static_cast<int>(scene.gaussians.size()), c, upstream);
    }
    return result;
}

FieldLossResult field_loss(const Scene& scene, const Camera& cam, const ViewTargets& targets) {
    return field_loss(scene, prepare_view(scene, cam), targets);
}

FieldTrainResult train_field(Scene scene, const std::vector<FieldViewData>& views,
                             const FieldTrainConfig& cfg) {
    if (views.empty()) throw std::invalid_argument("train_field: no views");
    const int slots = scene.num_slots;
    const int c = scene.feature_dim_low;
    const int g = static_cast<int>(scene.gaussians.size());

    std::vector<PreparedView> prepared;
    prepared.reserve(views.size());
    for (const auto& v : views) prepared.push_back(prepare_view(scene, v.camera));

    // Independent Adam moments per slot; shared step count.
    std::vector<Eigen::MatrixXd> m(slots, Eigen::MatrixXd::Zero(g, c));
    std::vector<Eigen::MatrixXd> v(slots, Eigen::MatrixXd::Zero(g, c));
    constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    double b1t = 1.0, b2t = 1.0;

    std::mt19937_64 rng(cfg.seed);
    std::vector<size_t> order(views.size());
    std::iota(order.begin(), order.end(), size_t{0});
    size_t cursor = order.size();  // trigger shuffle on first iteration

    FieldTrainResult result;
    result.loss_history.reserve(cfg.iterations);
    for (int it = 0; it < cfg.iterations; ++it) {
        if (cursor >= order.size()) {
            std::shuffle(order.begin(), order.end(), rng);
            cursor = 0;
        }
        const size_t vi = order[cursor++];
        FieldLossResult fl = field_loss(scene, prepared[vi], views[vi].targets);
        if (!std::isfinite(fl.loss))
            throw std::runtime_error("train_field: loss diverged at iteration " +
                                     std::to_string(it));
        result.loss_history.push_back(fl.loss);

        b1t *= b1;
        b2t *= b2;
        const double bc1 = 1.0 - b1t;
        const double bc2 = 1.0 - b2t;
        for (int slot = 0; slot < slots; ++slot) {
            const Eigen::MatrixXd& grad = fl.slot_grads[slot];
            m[slot] = b1 * m[slot] + (1 - b1) * grad;
            v[slot] = b2 * v[slot] + (1 - b2) * grad.cwiseAbs2();
            for (int gi = 0; gi < g; ++gi) {
                auto row = scene.gaussians[gi].lang_features.row(slot);
                for (int ci = 0; ci < c; ++ci) {
                    const double mh = m[slot](gi, ci) / bc1;
                    const double vh = v[slot](gi, ci) / bc2;
                    row(ci) -= cfg.learning_rate * mh / (std::sqrt(vh) + eps);
                }
            }
        }
    }
    result.scene = std::move(scene);
    return result;
}

}  // namespace malegs
