#pragma once

#include <Eigen/Dense>
#include <vector>

#include "malegs/grid.hpp"
#include "malegs/scene.hpp"

namespace malegs {

// Per-Gaussian channel vectors to composite: one row per Gaussian in scene
// order, K columns (3 for color, C for compressed language features).
using ChannelMatrix = Eigen::MatrixXd;

ChannelMatrix base_color_channels(const Scene& scene);
ChannelMatrix lang_slot_channels(const Scene& scene, int slot);

struct RenderTarget {
    Grid channels;     // H x W x K
    Grid alpha_accum;  // H x W x 1, 1 - prod(1 - alpha'_i)
};

// Projection, culling, depth sort and screen-space bounds for one camera.
// Reusable across renders of different channel sets from the same view.
struct PreparedView {
    int height = 0, width = 0;
    std::vector<Splat2D> splats;  // depth-sorted front to back
    struct Bounds {
        int x0, x1, y0, y1;  // inclusive pixel range
    };
    std::vector<Bounds> bounds;  // parallel to splats
};

PreparedView prepare_view(const Scene& scene, const Camera& cam);

// Front-to-back compositing in f64. accum has h*w*K entries (pixel-major),
// transmittance h*w entries holding prod(1 - alpha'_i) per pixel.
void composite(const PreparedView& view, const ChannelMatrix& channels,
               std::vector<double>& accum, std::vector<double>& transmittance);

// d(sum_px upstream . pixel) / d(channel row) for every Gaussian; rows for
// culled Gaussians stay zero. Compositing is linear in the channels, so the
// adjoint weight of Gaussian i at a pixel is T_i * alpha'_i.
Eigen::MatrixXd composite_backward(const PreparedView& view, int num_gaussians, int k,
                                   const std::vector<double>& upstream);

// f32-storage wrappers around the f64 compositing core.
RenderTarget render(const Scene& scene, const Camera& cam, const ChannelMatrix& channels);
RenderTarget render(const PreparedView& view, int num_gaussians, const ChannelMatrix& channels);

// One C-channel target per language slot, slot N-1 last (self-appearance).
std::vector<RenderTarget> render_language_maps(const Scene& scene, const Camera& cam);

Eigen::MatrixXd backward_channels(const Scene& scene, const Camera& cam,
                                  const ChannelMatrix& channels, const Grid& upstream);

}  // namespace malegs
