#include "malegs/wildscene.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "malegs/fnv.hpp"

namespace malegs {

double SceneSpec::eps_d_effective() const {
    return eps_d < 0.0 ? 0.5 * std::sqrt(static_cast<double>(d_a)) : eps_d;
}

namespace {

Eigen::VectorXd random_unit(std::mt19937_64& rng, int dim) {
    std::normal_distribution<double> normal(0.0, 1.0);
    Eigen::VectorXd v(dim);
    for (int i = 0; i < dim; ++i) v[i] = normal(rng);
    const double n = v.norm();
    return n > 0 ? Eigen::VectorXd(v / n) : random_unit(rng, dim);
}

constexpr double kMaxPairwiseCos = 0.3;

Eigen::VectorXd sample_capped(std::mt19937_64& rng, int dim,
                              const std::vector<const Eigen::VectorXd*>& others) {
    for (int attempt = 0; attempt < 1000; ++attempt) {
        Eigen::VectorXd v = random_unit(rng, dim);
        bool ok = true;
        for (const auto* o : others) {
            if (std::abs(v.dot(*o)) > kMaxPairwiseCos) {
                ok = false;
                break;
            }
        }
        if (ok) return v;
    }
    throw std::runtime_error("oracle embeddings: resampling failed to satisfy cosine cap");
}

}  // namespace

FeatureOracle FeatureOracle::create(const SceneSpec& spec) {
    FeatureOracle oracle;
    oracle.seed = spec.seed ^ 0x8f1ebc553aa0d7c1ull;
    oracle.appearance_noise_scale = spec.sigma_a;
    oracle.num_object_classes = spec.classes;
    oracle.background_class = spec.classes;
    oracle.backdrop_class = spec.classes + 1;
    oracle.transient_classes = {spec.classes + 2, spec.classes + 3};

    std::mt19937_64 rng(oracle.seed);
    const int dim = spec.feature_dim_high;

    std::vector<const Eigen::VectorXd*> drawn;
    auto add_class = [&](int id) {
        oracle.class_embeddings[id] = sample_capped(rng, dim, drawn);
        drawn.push_back(&oracle.class_embeddings[id]);
    };
    for (int c = 0; c < spec.classes; ++c) add_class(c);
    add_class(oracle.background_class);

    {
        // The backdrop is background-like scenery: its embedding correlates
        // with the background embedding at exactly the pairwise cap.
        const Eigen::VectorXd& bg = oracle.class_embeddings.at(oracle.background_class);
        Eigen::VectorXd perp = sample_capped(rng, dim, drawn);
        perp -= perp.dot(bg) * bg;
        perp.normalize();
        oracle.class_embeddings[oracle.backdrop_class] =
            kMaxPairwiseCos * bg + std::sqrt(1.0 - kMaxPairwiseCos * kMaxPairwiseCos) * perp;
        drawn.push_back(&oracle.class_embeddings[oracle.backdrop_class]);
    }

    // Transient embeddings are orthogonalized against every persistent
    // class so the transient-uncertainty signal is exact: a replaced pixel
    // always jumps the same squared distance regardless of what it hides.
    for (int id : oracle.transient_classes) {
        Eigen::VectorXd v = sample_capped(rng, dim, drawn);
        for (int c = 0; c <= oracle.backdrop_class; ++c) {
            const auto& e = oracle.class_embeddings.at(c);
            v -= v.dot(e) * e;
        }
        const double n = v.norm();
        if (n < 1e-9) throw std::runtime_error("oracle: degenerate transient embedding");
        oracle.class_embeddings[id] = v / n;
        drawn.push_back(&oracle.class_embeddings[id]);
    }

    oracle.sky_embedding = sample_capped(rng, dim, drawn);
    drawn.push_back(&oracle.sky_embedding);

    for (const char* label : {"object", "things", "scene", "sky", "building"}) {
        if (std::string(label) == "sky") {
            oracle.canonical_texts.emplace_back(label, oracle.sky_embedding);
        } else {
            Eigen::VectorXd v = sample_capped(rng, dim, drawn);
            oracle.canonical_texts.emplace_back(label, v);
        }
    }
    return oracle;
}

const Eigen::VectorXd& FeatureOracle::embedding(int class_id) const {
    auto it = class_embeddings.find(class_id);
    if (it == class_embeddings.end())
        throw std::invalid_argument("oracle: unknown class id " + std::to_string(class_id));
    return it->second;
}

Eigen::VectorXd FeatureOracle::text_embedding(const std::string& label) const {
    if (label == "sky") return sky_embedding;
    if (label == "background") return embedding(background_class);
    for (const auto& [text, v] : canonical_texts)
        if (text == label) return v;
    std::mt19937_64 rng(fnv1a64(label) ^ seed);
    return random_unit(rng, dim());
}

AppearanceModel::AppearanceModel(int d_a) {
    // Fixed seed: the same appearance-to-color map for every scene.
    std::mt19937_64 rng(0x6d616c6567730a01ull);
    std::normal_distribution<double> normal(0.0, 1.0);
    const double spread = 0.35 / std::sqrt(static_cast<double>(std::max(1, d_a)));
    gain_map_.resize(3, d_a);
    offset_map_.resize(3, d_a);
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < d_a; ++c) gain_map_(r, c) = spread * normal(rng);
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < d_a; ++c) offset_map_(r, c) = spread * normal(rng);
}

Eigen::Vector3d AppearanceModel::gain(const AppearanceEmbedding& l) const {
    return Eigen::Vector3d::Ones() + gain_map_ * l.vector;
}

Eigen::Vector3d AppearanceModel::offset(const AppearanceEmbedding& l) const {
    return offset_map_ * l.vector;
}

Eigen::Vector3d apply_appearance(const Gaussian3D& g, const AppearanceEmbedding& l,
                                 const AppearanceModel& model) {
    const Eigen::Vector3d c = g.base_color.cwiseProduct(model.gain(l)) + model.offset(l);
    return c.cwiseMax(0.0).cwiseMin(1.0);
}

namespace {

ChannelMatrix appearance_channels(const Scene& scene, const AppearanceEmbedding& l,
                                  const AppearanceModel& model) {
    ChannelMatrix m(scene.gaussians.size(), 3);
    for (size_t i = 0; i < scene.gaussians.size(); ++i)
        m.row(i) = apply_appearance(scene.gaussians[i], l, model).transpose();
    return m;
}

Eigen::Quaterniond random_quaternion(std::mt19937_64& rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    Eigen::Quaterniond q(normal(rng), normal(rng), normal(rng), normal(rng));
    q.normalize();
    return q;
}

}  // namespace

World gen_scene(const SceneSpec& spec) {
    if (spec.num_gaussians < 1) throw std::invalid_argument("gen_scene: no Gaussians requested");
    if (spec.classes < 1) throw std::invalid_argument("gen_scene: need at least one class");
    if (spec.views < 1) throw std::invalid_argument("gen_scene: need at least one view");
    if (spec.feature_dim_high < spec.feature_dim_low || spec.feature_dim_low < 1)
        throw std::invalid_argument("gen_scene: need D >= C >= 1");

    World world;
    world.spec = spec;
    world.oracle = FeatureOracle::create(spec);
    world.appearance_model = AppearanceModel(spec.d_a);

    std::mt19937_64 rng(spec.seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    Scene& scene = world.scene;
    scene.appearance_dim = spec.d_a;
    scene.feature_dim_high = spec.feature_dim_high;
    scene.feature_dim_low = spec.feature_dim_low;
    scene.num_slots = spec.num_slots;

    // Backdrop: a jittered grid of flat Gaussians on the z = +3.5 plane,
    // labeled with the background class. It fills every camera frustum so
    // each pixel carries a persistent class.
    const int backdrop_class = world.oracle.backdrop_class;
    const int n_backdrop = std::max(1, std::min(spec.num_gaussians / 8, 16));
    const int n_object_total = spec.num_gaussians - n_backdrop;
    const int grid_side = std::max(1, static_cast<int>(std::lround(std::sqrt(double(n_backdrop)))));
    const double backdrop_half = 7.0;
    for (int i = 0; i < n_backdrop; ++i) {
        const int gx = i % grid_side;
        const int gy = (i / grid_side) % grid_side;
        Gaussian3D g;
        g.position = Eigen::Vector3d(
            -backdrop_half + (2.0 * backdrop_half) * (gx + 0.5) / grid_side + 0.3 * normal(rng),
            -backdrop_half + (2.0 * backdrop_half) * (gy + 0.5) / grid_side + 0.3 * normal(rng),
            3.5 + 0.05 * normal(rng));
        const double s = 2.6 * backdrop_half / grid_side;
        g.scale = Eigen::Vector3d(s, s, 0.05);
        g.rotation = Eigen::Quaterniond::Identity();
        g.opacity = 0.97;
        g.base_color = Eigen::Vector3d(0.55 + 0.1 * unit(rng), 0.55 + 0.1 * unit(rng),
                                       0.6 + 0.1 * unit(rng));
        g.class_id = backdrop_class;
        g.lang_features = Eigen::MatrixXd::Zero(spec.num_slots, spec.feature_dim_low);
        scene.gaussians.push_back(g);
    }

    // Objects: compact Gaussian clusters on a ring facing the cameras.
    std::vector<Eigen::Vector3d> palette;
    for (int c = 0; c < spec.classes; ++c)
        palette.emplace_back(0.15 + 0.7 * unit(rng), 0.15 + 0.7 * unit(rng),
                             0.15 + 0.7 * unit(rng));
    // Disk radius shrinks with class count so objects never collide on the
    // placement ring; at 4 classes this evaluates to the familiar 0.92.
    const double disk_radius = std::min(0.92, 1.3 * std::sin(M_PI / spec.classes));
    for (int c = 0; c < spec.classes; ++c) {
        // Objects stay near the z = 0 plane so they rarely occlude each
        // other across the camera arc.
        const double ang = 2.0 * M_PI * c / spec.classes + 0.7;
        const Eigen::Vector3d center(2.3 * std::cos(ang), 1.9 * std::sin(ang),
                                     0.03 * normal(rng));
        const int count = n_object_total / spec.classes +
                          (c < n_object_total % spec.classes ? 1 : 0);
        for (int i = 0; i < count; ++i) {
            Gaussian3D g;
            // Uniform over a thin disk facing the camera arc: silhouettes
            // stay crisp from every view, with no grazing limb where a ray
            // skims a 3D cluster and alpha builds up over several pixels.
            const double phi = 2.0 * M_PI * unit(rng);
            const double radius = disk_radius * std::sqrt(unit(rng));
            g.position = center + Eigen::Vector3d(radius * std::cos(phi),
                                                  radius * std::sin(phi), 0.06 * normal(rng));
            const double base = (0.17 + 0.08 * unit(rng)) * (disk_radius / 0.92);
            g.scale = Eigen::Vector3d(base * (0.8 + 0.4 * unit(rng)),
                                      base * (0.8 + 0.4 * unit(rng)), 0.05 * base);
            const Eigen::Vector3d axis = random_quaternion(rng).vec().normalized();
            g.rotation = Eigen::Quaterniond(Eigen::AngleAxisd(0.12 * normal(rng), axis));
            g.opacity = 0.92 + 0.06 * unit(rng);
            g.base_color = (palette[c] + Eigen::Vector3d(0.08 * normal(rng), 0.08 * normal(rng),
                                                         0.08 * normal(rng)))
                               .cwiseMax(0.02)
                               .cwiseMin(0.98);
            g.class_id = c;
            g.lang_features = Eigen::MatrixXd::Zero(spec.num_slots, spec.feature_dim_low);
            scene.gaussians.push_back(g);
        }
    }

    for (int id : world.oracle.transient_classes)
        world.transient_colors[id] =
            Eigen::Vector3d(0.1 + 0.8 * unit(rng), 0.1 + 0.8 * unit(rng), 0.1 + 0.8 * unit(rng));

    // Cameras on an arc at radius 10, each with its own illumination state
    // and (sometimes) an occluder rectangle.
    const Eigen::Vector2d focal(1.35 * spec.width, 1.35 * spec.width);
    for (int v = 0; v < spec.views; ++v) {
        UnconstrainedView view;
        view.index = v;
        const double t = spec.views == 1 ? 0.5 : static_cast<double>(v) / (spec.views - 1);
        const double ang = -0.45 + 0.90 * t + 0.02 * normal(rng);
        const Eigen::Vector3d eye(10.0 * std::sin(ang), 0.5 * normal(rng),
                                  -10.0 * std::cos(ang));
        view.camera = Camera::look_at(eye, Eigen::Vector3d::Zero(), Eigen::Vector3d(0, 1, 0),
                                      focal, spec.height, spec.width, 0.1);
        // Photos are cropped differently; the principal point wobbles by up
        // to a noise block so the same surface lands in different blocks
        // across views.
        view.camera.principal_point.x() += 1.5 * kNoiseBlock * (unit(rng) - 0.5);
        view.camera.principal_point.y() += 1.5 * kNoiseBlock * (unit(rng) - 0.5);
        view.appearance.vector = Eigen::VectorXd(spec.d_a);
        for (int i = 0; i < spec.d_a; ++i) view.appearance.vector[i] = normal(rng);

        if (unit(rng) < spec.transient_rate) {
            TransientRect r;
            r.w = static_cast<int>((0.30 + 0.22 * unit(rng)) * spec.width);
            r.h = static_cast<int>((0.30 + 0.22 * unit(rng)) * spec.height);
            r.x0 = static_cast<int>(unit(rng) * (spec.width - r.w));
            r.y0 = static_cast<int>(unit(rng) * (spec.height - r.h));
            const size_t pick = static_cast<size_t>(unit(rng) * world.oracle.transient_classes.size());
            r.class_id = world.oracle.transient_classes[std::min(
                pick, world.oracle.transient_classes.size() - 1)];
            view.transients.push_back(r);
        }
        world.views.push_back(std::move(view));
    }

    for (auto& view : world.views) view.image = render_view(world, view, true);
    return world;
}

Grid render_view(const World& world, const UnconstrainedView& view, bool with_transients,
                 const AppearanceEmbedding* appearance) {
    const AppearanceEmbedding& l = appearance ? *appearance : view.appearance;
    RenderTarget rt = render(world.scene, view.camera,
                             appearance_channels(world.scene, l, world.appearance_model));
    Grid img = std::move(rt.channels);
    if (with_transients) {
        for (const auto& r : view.transients) {
            const Eigen::Vector3d color = world.transient_colors.at(r.class_id);
            for (int y = r.y0; y < r.y0 + r.h; ++y)
                for (int x = r.x0; x < r.x0 + r.w; ++x)
                    for (int c = 0; c < 3; ++c)
                        img.at(y, x, c) = static_cast<float>(color[c]);
        }
    }
    return img;
}

std::vector<int> dominant_class_map(const Scene& scene, const Camera& cam,
                                    int background_class) {
    // Composite one-hot class indicators; the leftover transmittance is the
    // background weight.
    std::vector<int> ids;
    for (const auto& g : scene.gaussians)
        if (std::find(ids.begin(), ids.end(), g.class_id) == ids.end())
            ids.push_back(g.class_id);
    std::sort(ids.begin(), ids.end());

    ChannelMatrix onehot = ChannelMatrix::Zero(scene.gaussians.size(), ids.size());
    for (size_t i = 0; i < scene.gaussians.size(); ++i) {
        const auto it = std::lower_bound(ids.begin(), ids.end(), scene.gaussians[i].class_id);
        onehot(i, it - ids.begin()) = 1.0;
    }

    const PreparedView view = prepare_view(scene, cam);
    std::vector<double> accum, transmittance;
    composite(view, onehot, accum, transmittance);

    std::vector<int> dominant(static_cast<size_t>(cam.height) * cam.width, background_class);
    for (size_t p = 0; p < dominant.size(); ++p) {
        double best = transmittance[p];
        int best_id = background_class;
        // Scan descending so that on ties the lowest class id wins and any
        // class beats the background residue.
        for (int c = static_cast<int>(ids.size()) - 1; c >= 0; --c) {
            const double wgt = accum[p * ids.size() + c];
            if (wgt >= best) {
                best = wgt;
                best_id = ids[c];
            }
        }
        dominant[p] = best_id;
    }
    return dominant;
}

namespace {

// Appearance sensitivity of one (class, block) cell. Most content is
// stable under illumination changes, a minority swings hard, the way
// reflective or shadowed surfaces do. Mean squared sensitivity stays ~1 so
// the block noise keeps unit expected norm overall. Keyed without the
// appearance: the same cells are volatile under every appearance, which is
// exactly the signal the appearance uncertainty map is meant to pick up.
double block_sensitivity(const FeatureOracle& oracle, int class_id, int bx, int by) {
    const int32_t key[3] = {class_id, bx, by};
    const uint64_t h = fnv1a64(key, sizeof(key), oracle.seed ^ 0x53454e5349544956ull);
    std::mt19937_64 rng(h);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    return unit(rng) < 0.15 ? 1.7 : 0.75;
}

// Unit-expected-norm block noise: N(0, I/D) keyed by (appearance bytes,
// class, block coordinates), scaled by the cell's appearance sensitivity.
Eigen::VectorXd block_noise(const FeatureOracle& oracle, const AppearanceEmbedding& l,
                            int class_id, int bx, int by) {
    uint64_t h = oracle.seed;
    for (int i = 0; i < l.vector.size(); ++i) {
        const float f = static_cast<float>(l.vector[i]);
        h = fnv1a64(&f, sizeof(f), h);
    }
    const int32_t key[3] = {class_id, bx, by};
    h = fnv1a64(key, sizeof(key), h);

    std::mt19937_64 rng(h);
    std::normal_distribution<double> normal(0.0, 1.0);
    const int dim = oracle.dim();
    Eigen::VectorXd eta(dim);
    for (int i = 0; i < dim; ++i) eta[i] = normal(rng);
    return block_sensitivity(oracle, class_id, bx, by) * eta /
           std::sqrt(static_cast<double>(dim));
}

}  // namespace

Grid extract_features(const FeatureOracle& oracle, const Scene& scene,
                      const UnconstrainedView& view, const AppearanceEmbedding& appearance,
                      bool include_transients) {
    for (const auto& g : scene.gaussians) oracle.embedding(g.class_id);  // reject unknown classes

    const Camera& cam = view.camera;
    const std::vector<int> dominant = dominant_class_map(scene, cam, oracle.background_class);
    const int dim = oracle.dim();
    Grid out(cam.height, cam.width, dim);
    out.tag = include_transients ? "original" : "render";

    std::map<std::tuple<int, int, int>, Eigen::VectorXd> cache;
    const double sigma = oracle.appearance_noise_scale;
    for (int y = 0; y < cam.height; ++y) {
        for (int x = 0; x < cam.width; ++x) {
            const Eigen::VectorXd* feat = nullptr;
            if (include_transients && view.in_transient(x, y)) {
                int cls = 0;
                for (const auto& r : view.transients)
                    if (r.contains(x, y)) cls = r.class_id;
                feat = &oracle.embedding(cls);
            } else {
                const int cls = dominant[static_cast<size_t>(y) * cam.width + x];
                if (sigma == 0.0) {
                    feat = &oracle.embedding(cls);
                } else {
                    const auto key = std::make_tuple(cls, x / kNoiseBlock, y / kNoiseBlock);
                    auto it = cache.find(key);
                    if (it == cache.end()) {
                        Eigen::VectorXd v =
                            oracle.embedding(cls) +
                            sigma * block_noise(oracle, appearance, cls, std::get<1>(key),
                                                std::get<2>(key));
                        v.normalize();
                        it = cache.emplace(key, std::move(v)).first;
                    }
                    feat = &it->second;
                }
            }
            float* row = out.row(y) + static_cast<size_t>(x) * dim;
            for (int i = 0; i < dim; ++i) row[i] = static_cast<float>((*feat)[i]);
        }
    }
    return out;
}

std::vector<AppearanceEmbedding> select_novel_appearances(const World& world, int n_minus_1,
                                                          double eps_q, double eps_d) {
    if (static_cast<int>(world.views.size()) < n_minus_1)
        throw std::invalid_argument("select_novel_appearances: fewer candidate views than slots");

    std::vector<AppearanceEmbedding> selected;
    int qualified = 0;
    for (const auto& view : world.views) {
        if (static_cast<int>(selected.size()) >= n_minus_1) break;
        const Grid self = render_view(world, view, false);
        double err = 0.0;
        for (size_t i = 0; i < self.size(); ++i)
            err += std::abs(static_cast<double>(self.data()[i]) - view.image.data()[i]);
        err /= static_cast<double>(self.size());
        if (!(err < eps_q)) continue;
        qualified++;
        bool distinct = true;
        for (const auto& s : selected) {
            if ((s.vector - view.appearance.vector).lpNorm<1>() <= eps_d) {
                distinct = false;
                break;
            }
        }
        if (distinct) selected.push_back(view.appearance);
    }
    if (static_cast<int>(selected.size()) < n_minus_1)
        throw InsufficientCandidatesError(qualified, n_minus_1);
    return selected;
}

std::vector<uint8_t> gt_mask(const World& world, const UnconstrainedView& view, int class_id) {
    world.oracle.embedding(class_id);  // class must exist
    const std::vector<int> dominant =
        dominant_class_map(world.scene, view.camera, world.oracle.background_class);
    std::vector<uint8_t> mask(dominant.size(), 0);
    for (int y = 0; y < view.camera.height; ++y)
        for (int x = 0; x < view.camera.width; ++x) {
            const size_t p = static_cast<size_t>(y) * view.camera.width + x;
            mask[p] = dominant[p] == class_id && !view.in_transient(x, y) ? 1 : 0;
        }
    return mask;
}

}  // namespace malegs
