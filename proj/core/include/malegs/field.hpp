#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

#include "malegs/autoencoder.hpp"
#include "malegs/grid.hpp"
#include "malegs/rasterizer.hpp"
#include "malegs/scene.hpp"

namespace malegs {

// Per-view optimization targets: N compressed latent maps (slot N-1 is
// self-appearance) plus the normalized uncertainty maps that gate the loss.
struct ViewTargets {
    int view_index = 0;
    std::vector<Grid> latents;  // N maps, C channels each
    Grid u_appearance;          // K = 1, in [0,1]
    Grid u_transient;           // K = 1, in [0,1]
};

struct FieldTrainConfig {
    int iterations = 30000;
    double learning_rate = 0.0025;
    uint64_t seed = 0;
};

// Encode every pixel of each D-dim feature map into the scene-specific
// latent space; uncertainty maps pass through unchanged.
ViewTargets build_targets(const MlpParams& encoder_params,
                          const std::vector<const Grid*>& feature_maps, const Grid& u_appearance,
                          const Grid& u_transient, int view_index = 0);

struct FieldLossResult {
    double loss = 0.0;
    std::vector<Eigen::MatrixXd> slot_grads;  // per slot: num_gaussians x C
};

// Masked L1 over all slots: sum of |rendered - target| weighted per pixel
// by (1 - U^A)(1 - U^T), with gradients from the compositing adjoint.
FieldLossResult field_loss(const Scene& scene, const Camera& cam, const ViewTargets& targets);
FieldLossResult field_loss(const Scene& scene, const PreparedView& view,
                           const ViewTargets& targets);

struct FieldViewData {
    Camera camera;
    ViewTargets targets;
};

struct FieldTrainResult {
    Scene scene;
    std::vector<double> loss_history;  // one entry per iteration
};

// Adam on the language feature slots only; one view per iteration in
// seeded shuffled order. Every other Gaussian field stays bit-identical.
FieldTrainResult train_field(Scene scene, const std::vector<FieldViewData>& views,
                             const FieldTrainConfig& cfg);

}  // namespace malegs
