#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "malegs/grid.hpp"
#include "malegs/rasterizer.hpp"
#include "malegs/scene.hpp"

namespace malegs {

// Latent illumination state of one photo.
struct AppearanceEmbedding {
    Eigen::VectorXd vector;
};

struct TransientRect {
    int x0 = 0, y0 = 0, w = 0, h = 0;
    int class_id = 0;

    bool contains(int x, int y) const {
        return x >= x0 && x < x0 + w && y >= y0 && y < y0 + h;
    }
};

// One posed "photo": camera, illumination state, occluders and the image
// itself (rendered with occluders baked in).
struct UnconstrainedView {
    int index = 0;
    Camera camera;
    AppearanceEmbedding appearance;
    std::vector<TransientRect> transients;
    Grid image;  // H x W x 3 in [0,1]

    bool in_transient(int x, int y) const {
        for (const auto& r : transients)
            if (r.contains(x, y)) return true;
        return false;
    }
};

// Generation parameters; also the schema of the scene spec file.
struct SceneSpec {
    uint64_t seed = 1;
    int num_gaussians = 200;
    int classes = 4;  // queryable object classes; the backdrop uses the background class
    int views = 8;
    int width = 64;
    int height = 64;
    int d_a = 8;               // appearance embedding dim
    int feature_dim_high = 512;  // D
    int feature_dim_low = 3;     // C
    int num_slots = 4;           // N
    double sigma_a = 0.3;
    double transient_rate = 0.0;
    double eps_q = 0.05;
    double eps_d = -1.0;  // < 0 means default 0.5 * sqrt(d_a)

    double eps_d_effective() const;
};

// Stand-in for the pixel-level vision-language encoder: every class owns a
// unit embedding, per-pixel features are the dominant class's embedding
// plus seeded block noise.
class FeatureOracle {
public:
    static FeatureOracle create(const SceneSpec& spec);

    std::map<int, Eigen::VectorXd> class_embeddings;  // objects, background, transients
    double appearance_noise_scale = 0.0;              // sigma_a
    uint64_t seed = 0;

    int num_object_classes = 0;
    int background_class = 0;  // empty pixels (no composite coverage)
    int backdrop_class = 0;    // the persistent wall behind the objects
    std::vector<int> transient_classes;

    Eigen::VectorXd sky_embedding;
    // Fixed contrast phrases; "sky" shares the sky embedding.
    std::vector<std::pair<std::string, Eigen::VectorXd>> canonical_texts;

    const Eigen::VectorXd& embedding(int class_id) const;

    // Deterministic unit vector for arbitrary query text. Class-name
    // queries should use embedding(class_id) instead.
    Eigen::VectorXd text_embedding(const std::string& label) const;

    int dim() const { return static_cast<int>(sky_embedding.size()); }
};

// Fixed deterministic map from appearance embeddings to per-channel color
// gain/offset; the zero embedding is the identity appearance.
class AppearanceModel {
public:
    AppearanceModel() = default;
    explicit AppearanceModel(int d_a);

    Eigen::Vector3d gain(const AppearanceEmbedding& l) const;
    Eigen::Vector3d offset(const AppearanceEmbedding& l) const;

private:
    Eigen::Matrix<double, 3, Eigen::Dynamic> gain_map_;
    Eigen::Matrix<double, 3, Eigen::Dynamic> offset_map_;
};

// The full synthetic stand-in for (photo collection, radiance field,
// feature extractor).
struct World {
    Scene scene;
    std::vector<UnconstrainedView> views;
    FeatureOracle oracle;
    AppearanceModel appearance_model;
    std::map<int, Eigen::Vector3d> transient_colors;
    SceneSpec spec;
};

struct InsufficientCandidatesError : std::runtime_error {
    int qualified;
    InsufficientCandidatesError(int got, int need)
        : std::runtime_error("appearance selection: only " + std::to_string(got) +
                             " candidate(s) qualified, need " + std::to_string(need)),
          qualified(got) {}
};

// Deterministic world construction. Objects are Gaussian clusters placed in
// front of an opaque backdrop labeled with the background class; cameras
// sit on an arc facing them.
World gen_scene(const SceneSpec& spec);

// clamp(c * gain(l) + offset(l), 0, 1).
Eigen::Vector3d apply_appearance(const Gaussian3D& g, const AppearanceEmbedding& l,
                                 const AppearanceModel& model);

// Composite the scene under the given appearance (view's own when null);
// with_transients overwrites occluder rectangles with their flat color.
Grid render_view(const World& world, const UnconstrainedView& view, bool with_transients,
                 const AppearanceEmbedding* appearance = nullptr);

// Per-pixel dominant class by composite weight; the residual transmittance
// competes as the background class. Ties go to the lower class id, with
// background losing ties.
std::vector<int> dominant_class_map(const Scene& scene, const Camera& cam,
                                    int background_class);

// D-channel feature map: normalize(e_class + sigma_a * eta) with eta a
// seeded unit-expected-norm noise vector constant over 8x8 pixel blocks and
// keyed by (appearance, class, block). Transient rectangles (when included)
// emit their class embedding unperturbed.
Grid extract_features(const FeatureOracle& oracle, const Scene& scene,
                      const UnconstrainedView& view, const AppearanceEmbedding& appearance,
                      bool include_transients);

// Greedy scan over views in ascending index; keeps embeddings whose
// self-render mean-L1 error beats eps_q and whose Manhattan distance to
// every kept embedding exceeds eps_d.
std::vector<AppearanceEmbedding> select_novel_appearances(const World& world, int n_minus_1,
                                                          double eps_q, double eps_d);

// True where the dominant composited class matches and the pixel is not
// occluded in this view.
std::vector<uint8_t> gt_mask(const World& world, const UnconstrainedView& view, int class_id);

inline constexpr int kNoiseBlock = 8;

}  // namespace malegs
