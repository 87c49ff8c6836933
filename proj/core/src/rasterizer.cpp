#include "malegs/rasterizer.hpp"

#include <cmath>
#include <stdexcept>

namespace malegs {

ChannelMatrix base_color_channels(const Scene& scene) {
    ChannelMatrix m(scene.gaussians.size(), 3);
    for (size_t i = 0; i < scene.gaussians.size(); ++i)
        m.row(i) = scene.gaussians[i].base_color.transpose();
    return m;
}

ChannelMatrix lang_slot_channels(const Scene& scene, int slot) {
    if (slot < 0 || slot >= scene.num_slots)
        throw std::out_of_range("lang_slot_channels: slot out of range");
    ChannelMatrix m(scene.gaussians.size(), scene.feature_dim_low);
    for (size_t i = 0; i < scene.gaussians.size(); ++i)
        m.row(i) = scene.gaussians[i].lang_features.row(slot);
    return m;
}

PreparedView prepare_view(const Scene& scene, const Camera& cam) {
    PreparedView view;
    view.height = cam.height;
    view.width = cam.width;
    view.splats.reserve(scene.gaussians.size());
    for (size_t i = 0; i < scene.gaussians.size(); ++i) {
        auto s = project_gaussian(scene.gaussians[i], cam);
        if (!s) continue;
        s->source_index = static_cast<int>(i);
        view.splats.push_back(*s);
    }
    depth_sort(view.splats);

    view.bounds.reserve(view.splats.size());
    std::vector<Splat2D> kept;
    kept.reserve(view.splats.size());
    for (const auto& s : view.splats) {
        if (s.opacity * 255.0 <= 1.0) continue;  // no pixel can clear the cutoff
        const double q_max = 2.0 * std::log(s.opacity * 255.0);
        const Eigen::Matrix2d cov = s.conic.inverse();
        const double ext_x = std::sqrt(std::max(0.0, q_max * cov(0, 0)));
        const double ext_y = std::sqrt(std::max(0.0, q_max * cov(1, 1)));
        PreparedView::Bounds b;
        b.x0 = std::max(0, static_cast<int>(std::floor(s.center_px.x() - ext_x - 0.5)));
        b.x1 = std::min(view.width - 1, static_cast<int>(std::ceil(s.center_px.x() + ext_x - 0.5)));
        b.y0 = std::max(0, static_cast<int>(std::floor(s.center_px.y() - ext_y - 0.5)));
        b.y1 = std::min(view.height - 1, static_cast<int>(std::ceil(s.center_px.y() + ext_y - 0.5)));
        if (b.x0 > b.x1 || b.y0 > b.y1) continue;
        kept.push_back(s);
        view.bounds.push_back(b);
    }
    view.splats = std::move(kept);
    return view;
}

void composite(const PreparedView& view, const ChannelMatrix& channels,
               std::vector<double>& accum, std::vector<double>& transmittance) {
    if (!channels.allFinite())
        throw std::invalid_argument("composite: non-finite channel values");
    const int k = static_cast<int>(channels.cols());
    const size_t npx = static_cast<size_t>(view.height) * view.width;
    accum.assign(npx * k, 0.0);
    transmittance.assign(npx, 1.0);

    for (size_t si = 0; si < view.splats.size(); ++si) {
        const Splat2D& s = view.splats[si];
        const auto& b = view.bounds[si];
        const auto row = channels.row(s.source_index);
        for (int y = b.y0; y <= b.y1; ++y) {
            for (int x = b.x0; x <= b.x1; ++x) {
                const Eigen::Vector2d px(x + 0.5, y + 0.5);
                const double w = gaussian_weight_at(s, px);
                if (w == 0.0) continue;
                const size_t p = static_cast<size_t>(y) * view.width + x;
                const double contrib = transmittance[p] * w;
                double* out = &accum[p * k];
                for (int c = 0; c < k; ++c) out[c] += contrib * row(c);
                transmittance[p] *= (1.0 - w);
            }
        }
    }
}

Eigen::MatrixXd composite_backward(const PreparedView& view, int num_gaussians, int k,
                                   const std::vector<double>& upstream) {
    const size_t npx = static_cast<size_t>(view.height) * view.width;
    if (upstream.size() != npx * static_cast<size_t>(k))
        throw std::invalid_argument("composite_backward: upstream shape mismatch");

    Eigen::MatrixXd grads = Eigen::MatrixXd::Zero(num_gaussians, k);
    std::vector<double> transmittance(npx, 1.0);

    // Same traversal as the forward pass; the adjoint of Gaussian i at a
    // pixel is its composite weight T_i * alpha'_i. Accumulation runs over
    // each splat's bounding box rows in ascending order, so results are
    // bit-reproducible.
    for (size_t si = 0; si < view.splats.size(); ++si) {
        const Splat2D& s = view.splats[si];
        const auto& b = view.bounds[si];
        auto grow = grads.row(s.source_index);
        for (int y = b.y0; y <= b.y1; ++y) {
            for (int x = b.x0; x <= b.x1; ++x) {
                const Eigen::Vector2d px(x + 0.5, y + 0.5);
                const double w = gaussian_weight_at(s, px);
                if (w == 0.0) continue;
                const size_t p = static_cast<size_t>(y) * view.width + x;
                const double contrib = transmittance[p] * w;
                const double* up = &upstream[p * k];
                for (int c = 0; c < k; ++c) grow(c) += contrib * up[c];
                transmittance[p] *= (1.0 - w);
            }
        }
    }
    return grads;
}

RenderTarget render(const PreparedView& view, int num_gaussians, const ChannelMatrix& channels) {
    if (channels.rows() != num_gaussians)
        throw std::invalid_argument("render: channel row count mismatch");
    std::vector<double> accum, transmittance;
    composite(view, channels, accum, transmittance);

    const int k = static_cast<int>(channels.cols());
    RenderTarget rt{Grid(view.height, view.width, k), Grid(view.height, view.width, 1)};
    for (int y = 0; y < view.height; ++y) {
        for (int x = 0; x < view.width; ++x) {
            const size_t p = static_cast<size_t>(y) * view.width + x;
            for (int c = 0; c < k; ++c)
                rt.channels.at(y, x, c) = static_cast<float>(accum[p * k + c]);
            rt.alpha_accum.at(y, x, 0) = static_cast<float>(1.0 - transmittance[p]);
        }
    }
    return rt;
}

RenderTarget render(const Scene& scene, const Camera& cam, const ChannelMatrix& channels) {
    const PreparedView view = prepare_view(scene, cam);
    return render(view, static_cast<int>(scene.gaussians.size()), channels);
}

std::vector<RenderTarget> render_language_maps(const Scene& scene, const Camera& cam) {
    const PreparedView view = prepare_view(scene, cam);
    std::vector<RenderTarget> targets;
    targets.reserve(scene.num_slots);
    for (int n = 0; n < scene.num_slots; ++n)
        targets.push_back(render(view, static_cast<int>(scene.gaussians.size()),
                                 lang_slot_channels(scene, n)));
    return targets;
}

Eigen::MatrixXd backward_channels(const Scene& scene, const Camera& cam,
                                  const ChannelMatrix& channels, const Grid& upstream) {
    const PreparedView view = prepare_view(scene, cam);
    if (upstream.height() != view.height || upstream.width() != view.width ||
        upstream.channels() != channels.cols())
        throw std::invalid_argument("backward_channels: upstream shape mismatch");
    std::vector<double> up(upstream.size());
    for (size_t i = 0; i < up.size(); ++i) up[i] = upstream.data()[i];
    return composite_backward(view, static_cast<int>(scene.gaussians.size()),
                              static_cast<int>(channels.cols()), up);
}

}  // namespace malegs
