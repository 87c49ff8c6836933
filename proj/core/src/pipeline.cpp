#include "malegs/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <unordered_map>

#include <nlohmann/json.hpp>

#include "malegs/autoencoder.hpp"
#include "malegs/field.hpp"
#include "malegs/fnv.hpp"
#include "malegs/query.hpp"
#include "malegs/rasterizer.hpp"
#include "malegs/uncertainty.hpp"

namespace fs = std::filesystem;

namespace malegs {

namespace {

std::string view_name(int level, int view, const std::string& what) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "l%d_v%03d_%s.mft1", level, view, what.c_str());
    return buf;
}

std::string sanitize(const std::string& label) {
    std::string out;
    for (char c : label) out += (std::isalnum(static_cast<unsigned char>(c)) ? c : '_');
    return out;
}

FeatureOracle level_oracle(const FeatureOracle& base, int level) {
    FeatureOracle o = base;
    o.seed ^= 0x9e3779b97f4a7c15ull * static_cast<uint64_t>(level);
    return o;
}

std::string read_file(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    if (!is) throw std::runtime_error("cannot read " + p.string());
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

void write_file(const fs::path& p, const std::string& bytes) {
    std::ofstream os(p, std::ios::binary);
    os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!os) throw std::runtime_error("cannot write " + p.string());
}

std::vector<uint8_t> mask_from_grid(const Grid& g) {
    std::vector<uint8_t> m(g.size());
    for (size_t i = 0; i < m.size(); ++i) m[i] = g.data()[i] > 0.5f ? 1 : 0;
    return m;
}

Grid grid_from_mask(const std::vector<uint8_t>& mask, int h, int w) {
    Grid g(h, w, 1);
    for (size_t i = 0; i < mask.size(); ++i) g.data()[i] = mask[i] ? 1.0f : 0.0f;
    return g;
}

// Decode a rendered C-channel latent map into a unit-norm D-channel map.
Grid decode_latent_map(const MlpParams& params, const Grid& latents) {
    const int c = latents.channels();
    const size_t npx = static_cast<size_t>(latents.height()) * latents.width();
    Eigen::MatrixXd in(c, npx);
    for (size_t p = 0; p < npx; ++p)
        for (int i = 0; i < c; ++i) in(i, p) = latents.data()[p * c + i];
    const Eigen::MatrixXd out = decode(params, in);
    Grid decoded(latents.height(), latents.width(), static_cast<int>(out.rows()));
    for (size_t p = 0; p < npx; ++p)
        for (int i = 0; i < out.rows(); ++i)
            decoded.data()[p * out.rows() + i] = static_cast<float>(out(i, p));
    return decoded;
}

}  // namespace

struct Pipeline::Impl {
    PipelineConfig cfg;
    std::map<std::string, std::string> canon;
    fs::path out;
    std::optional<World> world;

    explicit Impl(PipelineConfig c) : cfg(std::move(c)), canon(cfg.canonical()), out(cfg.out_dir) {
        fs::create_directories(out);
    }

    const World& get_world() {
        if (!world) world = gen_scene(cfg.scene);
        return *world;
    }

    std::string subset_hash(const std::vector<std::string>& keys,
                            const std::vector<std::string>& parents,
                            const std::string& extra = "") {
        std::string blob;
        for (const auto& k : keys) blob += k + "=" + canon.at(k) + "\n";
        for (const auto& p : parents) blob += "parent:" + p + "\n";
        blob += extra;
        return to_hex(fnv1a64(blob));
    }

    std::vector<std::string> scene_keys() const {
        std::vector<std::string> keys;
        for (const auto& [k, v] : canon)
            if (k.rfind("scene.", 0) == 0) keys.push_back(k);
        return keys;
    }

    std::string run_stage(const std::string& name, const std::string& hash,
                          const std::function<void(const fs::path&)>& build) {
        const fs::path final_dir = out / (name + "-" + hash);
        if (fs::exists(final_dir / ".done")) return final_dir.string();
        const fs::path tmp = out / (name + "-" + hash + ".tmp");
        std::error_code ec;
        fs::remove_all(tmp, ec);
        fs::create_directories(tmp);
        try {
            build(tmp);
        } catch (const StageError&) {
            fs::remove_all(tmp, ec);
            throw;
        } catch (const std::exception& e) {
            fs::remove_all(tmp, ec);
            throw StageError(name, e.what());
        }
        write_file(tmp / ".done", hash + "\n");
        fs::rename(tmp, final_dir, ec);
        if (ec) {
            if (fs::exists(final_dir / ".done"))
                fs::remove_all(tmp, ec);  // lost a benign race; reuse the winner
            else
                throw StageError(name, "cannot finalize stage directory: " + ec.message());
        }
        return final_dir.string();
    }

    // --- stage hash chain -------------------------------------------------

    std::string gen_hash() { return subset_hash(scene_keys(), {}); }
    std::string features_hash() { return subset_hash({"levels"}, {gen_hash()}); }
    std::string uncertainty_hash() {
        return subset_hash({"use_tum", "use_aum"}, {features_hash()});
    }
    std::string train_ae_hash() {
        return subset_hash({"ae_epochs", "ae_lr", "ae_batch", "ae_hidden", "tau_u"},
                           {uncertainty_hash()});
    }
    std::string targets_hash() { return subset_hash({}, {train_ae_hash()}); }
    std::string train_field_hash() {
        return subset_hash({"field_iterations", "field_lr"}, {targets_hash()});
    }
    std::string queries_blob() {
        return cfg.queries_path.empty() ? std::string("default")
                                        : read_file(cfg.queries_path);
    }
    std::string query_hash() {
        return subset_hash({"tau", "smooth_kernel", "ensemble", "use_bg_filter"},
                           {train_field_hash()}, queries_blob());
    }
    std::string eval_hash() { return subset_hash({}, {query_hash()}); }
    std::string seg3d_hash() {
        return subset_hash({"tau_3d"}, {train_field_hash()}, queries_blob());
    }
    std::string style_hash() {
        return subset_hash({"smooth_kernel", "ensemble", "use_bg_filter"},
                           {train_field_hash()}, queries_blob());
    }

    // --- query plumbing ---------------------------------------------------

    std::vector<QueryLine> resolve_queries() {
        if (!cfg.queries_path.empty()) return load_query_file(cfg.queries_path);
        std::vector<QueryLine> qs;
        for (int c = 0; c < cfg.scene.classes; ++c)
            qs.push_back({"class" + std::to_string(c), c, false});
        return qs;
    }

    QueryEmbedding query_embedding(const FeatureOracle& oracle, const QueryLine& q) {
        if (q.is_style) return {oracle.text_embedding(q.label), q.label};
        return {oracle.embedding(q.class_id), q.label};
    }

    CanonicalSet canonical_set(const FeatureOracle& oracle) {
        CanonicalSet canon;
        for (const auto& [label, v] : oracle.canonical_texts) canon.items.push_back({v, label});
        return canon;
    }

    BackgroundTexts background_texts(const FeatureOracle& oracle) {
        return {{oracle.sky_embedding, "sky"},
                {oracle.embedding(oracle.background_class), "background"}};
    }

    // Trained per-level scenes and decoders loaded from artifacts.
    struct QueryContext {
        std::vector<Scene> scenes;
        std::vector<MlpParams> params;
        std::vector<std::vector<PreparedView>> prepared;  // [level][view]
        CanonicalSet canon;
        BackgroundTexts bg;
        EnsembleMode mode = EnsembleMode::WeightedMax;
    };

    QueryContext make_query_context(const std::string& field_dir, const std::string& ae_dir) {
        QueryContext ctx;
        const World& w = get_world();
        for (int level = 0; level < cfg.levels; ++level) {
            Scene s = load_scene(fs::path(field_dir) / ("l" + std::to_string(level) + "_scene.mgs1"));
            s.appearance_dim = cfg.scene.d_a;
            s.feature_dim_high = cfg.scene.feature_dim_high;
            ctx.scenes.push_back(std::move(s));
            ctx.params.push_back(
                load_params(fs::path(ae_dir) / ("l" + std::to_string(level) + "_ae.mae1")));
        }
        ctx.prepared.resize(cfg.levels);
        for (int level = 0; level < cfg.levels; ++level)
            for (const auto& view : w.views)
                ctx.prepared[level].push_back(prepare_view(ctx.scenes[level], view.camera));
        ctx.canon = canonical_set(w.oracle);
        ctx.bg = background_texts(w.oracle);
        ctx.mode = ensemble_mode_from_string(cfg.ensemble);
        return ctx;
    }

    // Decoded feature maps for one (level, view): one D-channel grid per slot.
    std::vector<Grid> decoded_slots(const QueryContext& ctx, int level, int view_index) {
        const Scene& scene = ctx.scenes[level];
        const PreparedView& pv = ctx.prepared[level][view_index];
        std::vector<Grid> out;
        for (int slot = 0; slot < scene.num_slots; ++slot) {
            RenderTarget rt = render(pv, static_cast<int>(scene.gaussians.size()),
                                     lang_slot_channels(scene, slot));
            out.push_back(decode_latent_map(ctx.params[level], rt.channels));
        }
        return out;
    }

    // Fused (pre-smoothing) score map for one query at one view, selecting
    // the best semantic level by global maximum.
    ScoreMap fused_score(const QueryContext& ctx,
                         const std::vector<std::vector<Grid>>& decoded_per_level,
                         const QueryEmbedding& q) {
        std::vector<ScoreMap> per_level;
        for (int level = 0; level < cfg.levels; ++level) {
            const auto& decoded = decoded_per_level[level];
            std::vector<ScoreMap> slot_scores;
            for (const auto& d : decoded) slot_scores.push_back(relevancy_map(d, q, ctx.canon));
            ScoreMap bg_map;
            if (cfg.use_bg_filter) {
                bg_map = background_score(decoded.back(), q, ctx.bg);
            } else {
                bg_map = ScoreMap{Grid(decoded.back().height(), decoded.back().width(), 1, 1.0f),
                                  q.label, -1};
            }
            per_level.push_back(ensemble(slot_scores, bg_map, ctx.mode));
        }
        return hierarchical_query(per_level);
    }

    // --- stages -------------------------------------------------------------

    std::string stage_gen() {
        return run_stage("gen", gen_hash(), [this](const fs::path& dir) {
            const World& w = get_world();
            save_scene(w.scene, (dir / "scene.mgs1").string());

            nlohmann::json views = nlohmann::json::array();
            for (const auto& view : w.views) {
                nlohmann::json jv;
                jv["index"] = view.index;
                const Camera& c = view.camera;
                jv["camera"] = {
                    {"rotation", std::vector<double>(c.rotation.data(), c.rotation.data() + 9)},
                    {"translation", {c.translation.x(), c.translation.y(), c.translation.z()}},
                    {"focal", {c.focal.x(), c.focal.y()}},
                    {"principal_point", {c.principal_point.x(), c.principal_point.y()}},
                    {"height", c.height},
                    {"width", c.width},
                    {"near_plane", c.near_plane}};
                jv["appearance"] = std::vector<double>(
                    view.appearance.vector.data(),
                    view.appearance.vector.data() + view.appearance.vector.size());
                nlohmann::json rects = nlohmann::json::array();
                for (const auto& r : view.transients)
                    rects.push_back({{"x0", r.x0}, {"y0", r.y0}, {"w", r.w}, {"h", r.h},
                                     {"class_id", r.class_id}});
                jv["transients"] = rects;
                char img[32];
                std::snprintf(img, sizeof(img), "view_%03d_image.mft1", view.index);
                jv["image"] = img;
                save_grid(view.image, (dir / img).string());
                views.push_back(jv);
            }
            nlohmann::json root;
            root["views"] = views;
            nlohmann::json colors;
            for (const auto& [id, c] : w.transient_colors)
                colors[std::to_string(id)] = {c.x(), c.y(), c.z()};
            root["transient_colors"] = colors;
            write_file(dir / "views.json", root.dump(2) + "\n");
        });
    }

    std::string stage_features() {
        stage_gen();
        return run_stage("features", features_hash(), [this](const fs::path& dir) {
            const World& w = get_world();
            const int n_novel = cfg.scene.num_slots - 1;
            std::vector<AppearanceEmbedding> selected;
            if (n_novel > 0)
                selected = select_novel_appearances(w, n_novel, cfg.scene.eps_q,
                                                    cfg.scene.eps_d_effective());

            nlohmann::json sel = nlohmann::json::array();
            for (const auto& a : selected)
                sel.push_back(std::vector<double>(a.vector.data(),
                                                  a.vector.data() + a.vector.size()));
            write_file(dir / "selected.json", sel.dump(2) + "\n");

            for (int level = 0; level < cfg.levels; ++level) {
                const FeatureOracle oracle = level_oracle(w.oracle, level);
                for (const auto& view : w.views) {
                    Grid orig = extract_features(oracle, w.scene, view, view.appearance, true);
                    save_grid(orig, (dir / view_name(level, view.index, "orig")).string());
                    Grid self = extract_features(oracle, w.scene, view, view.appearance, false);
                    save_grid(self, (dir / view_name(level, view.index, "self")).string());
                    for (int k = 0; k < n_novel; ++k) {
                        Grid novel = extract_features(oracle, w.scene, view, selected[k], false);
                        save_grid(novel,
                                  (dir / view_name(level, view.index,
                                                   "novel" + std::to_string(k))).string());
                    }
                }
            }
        });
    }

    std::string stage_uncertainty() {
        const std::string feat_dir = stage_features();
        return run_stage("uncertainty", uncertainty_hash(), [this, &feat_dir](const fs::path& dir) {
            const World& w = get_world();
            const int n_novel = cfg.scene.num_slots - 1;
            for (int level = 0; level < cfg.levels; ++level) {
                std::vector<UncertaintyMap> uas, uts;
                for (const auto& view : w.views) {
                    const Grid self =
                        load_grid((fs::path(feat_dir) / view_name(level, view.index, "self")).string());
                    if (cfg.use_aum) {
                        std::vector<Grid> maps;
                        for (int k = 0; k < n_novel; ++k)
                            maps.push_back(load_grid(
                                (fs::path(feat_dir) /
                                 view_name(level, view.index, "novel" + std::to_string(k)))
                                    .string()));
                        maps.push_back(self);
                        uas.push_back(appearance_uncertainty(maps));
                    } else {
                        uas.push_back({Grid(self.height(), self.width(), 1),
                                       UncertaintyKind::Appearance, false});
                    }
                    if (cfg.use_tum) {
                        const Grid orig = load_grid(
                            (fs::path(feat_dir) / view_name(level, view.index, "orig")).string());
                        uts.push_back(transient_uncertainty(self, orig));
                    } else {
                        uts.push_back({Grid(self.height(), self.width(), 1),
                                       UncertaintyKind::Transient, false});
                    }
                }
                normalize_maps(uas);
                normalize_maps(uts);
                for (size_t v = 0; v < w.views.size(); ++v) {
                    save_grid(uas[v].values,
                              (dir / view_name(level, static_cast<int>(v), "ua")).string());
                    save_grid(uts[v].values,
                              (dir / view_name(level, static_cast<int>(v), "ut")).string());
                }
            }
        });
    }

    std::string stage_train_ae() {
        const std::string feat_dir = stage_features();
        const std::string unc_dir = stage_uncertainty();
        return run_stage("train-ae", train_ae_hash(), [&, this](const fs::path& dir) {
            const World& w = get_world();
            for (int level = 0; level < cfg.levels; ++level) {
                // Training set: original-photo features only, weighted by
                // 1 - U^T, hard-excluded above tau_u. Identical pixels
                // collapse into one sample with a multiplicity count.
                std::vector<AeSample> samples;
                std::unordered_map<std::string, size_t> dedup;
                for (const auto& view : w.views) {
                    const Grid orig = load_grid(
                        (fs::path(feat_dir) / view_name(level, view.index, "orig")).string());
                    const Grid ut = load_grid(
                        (fs::path(unc_dir) / view_name(level, view.index, "ut")).string());
                    const int d = orig.channels();
                    const size_t npx = static_cast<size_t>(orig.height()) * orig.width();
                    for (size_t p = 0; p < npx; ++p) {
                        const float u = ut.data()[p];
                        if (u > cfg.tau_u) continue;
                        const float wgt = 1.0f - u;
                        std::string key(reinterpret_cast<const char*>(orig.data() + p * d),
                                        sizeof(float) * d);
                        key.append(reinterpret_cast<const char*>(&wgt), sizeof(float));
                        auto [it, inserted] = dedup.emplace(std::move(key), samples.size());
                        if (inserted) {
                            AeSample s;
                            s.feature.resize(d);
                            for (int i = 0; i < d; ++i) s.feature[i] = orig.data()[p * d + i];
                            s.weight = wgt;
                            samples.push_back(std::move(s));
                        } else {
                            samples[it->second].count += 1.0;
                        }
                    }
                }
                if (samples.empty())
                    throw std::runtime_error("autoencoder training set is empty after exclusion");

                TrainConfig tc;
                tc.epochs = cfg.ae_epochs;
                tc.learning_rate = cfg.ae_lr;
                tc.batch_size = cfg.ae_batch;
                tc.seed = cfg.scene.seed ^ (0xae5eed0000000001ull + level);
                tc.tau_u = cfg.tau_u;
                const MlpParams init =
                    init_params(cfg.scene.feature_dim_high, cfg.scene.feature_dim_low,
                                cfg.ae_hidden_effective(), tc.seed);
                AeTrainResult res = malegs::train_ae(samples, init, tc);
                save_params(res.params, (dir / ("l" + std::to_string(level) + "_ae.mae1")).string());
                save_loss_curve(res.loss_curve,
                                (dir / ("l" + std::to_string(level) + "_ae_loss.csv")).string());
            }
        });
    }

    std::string stage_targets() {
        const std::string feat_dir = stage_features();
        const std::string unc_dir = stage_uncertainty();
        const std::string ae_dir = stage_train_ae();
        return run_stage("targets", targets_hash(), [&, this](const fs::path& dir) {
            const World& w = get_world();
            const int n_novel = cfg.scene.num_slots - 1;
            for (int level = 0; level < cfg.levels; ++level) {
                const MlpParams params =
                    load_params((fs::path(ae_dir) / ("l" + std::to_string(level) + "_ae.mae1")).string());
                for (const auto& view : w.views) {
                    std::vector<Grid> feats;
                    for (int k = 0; k < n_novel; ++k)
                        feats.push_back(load_grid(
                            (fs::path(feat_dir) /
                             view_name(level, view.index, "novel" + std::to_string(k))).string()));
                    // The self slot learns from the original photo's
                    // features; the self-appearance render only feeds the
                    // uncertainty maps.
                    feats.push_back(load_grid(
                        (fs::path(feat_dir) / view_name(level, view.index, "orig")).string()));
                    const Grid ua = load_grid(
                        (fs::path(unc_dir) / view_name(level, view.index, "ua")).string());
                    const Grid ut = load_grid(
                        (fs::path(unc_dir) / view_name(level, view.index, "ut")).string());
                    std::vector<const Grid*> ptrs;
                    for (const auto& f : feats) ptrs.push_back(&f);
                    const ViewTargets vt = build_targets(params, ptrs, ua, ut, view.index);
                    for (int slot = 0; slot < cfg.scene.num_slots; ++slot)
                        save_grid(vt.latents[slot],
                                  (dir / view_name(level, view.index,
                                                   "target" + std::to_string(slot))).string());
                }
            }
        });
    }

    std::string stage_train_field() {
        const std::string unc_dir = stage_uncertainty();
        const std::string tgt_dir = stage_targets();
        return run_stage("train-field", train_field_hash(), [&, this](const fs::path& dir) {
            const World& w = get_world();
            for (int level = 0; level < cfg.levels; ++level) {
                std::vector<FieldViewData> data;
                for (const auto& view : w.views) {
                    FieldViewData fv;
                    fv.camera = view.camera;
                    fv.targets.view_index = view.index;
                    for (int slot = 0; slot < cfg.scene.num_slots; ++slot)
                        fv.targets.latents.push_back(load_grid(
                            (fs::path(tgt_dir) /
                             view_name(level, view.index, "target" + std::to_string(slot)))
                                .string()));
                    fv.targets.u_appearance = load_grid(
                        (fs::path(unc_dir) / view_name(level, view.index, "ua")).string());
                    fv.targets.u_transient = load_grid(
                        (fs::path(unc_dir) / view_name(level, view.index, "ut")).string());
                    data.push_back(std::move(fv));
                }
                FieldTrainConfig fc;
                fc.iterations = cfg.field_iterations;
                fc.learning_rate = cfg.field_lr;
                fc.seed = cfg.scene.seed ^ (0xf1e1d0000000002ull + level);
                FieldTrainResult res = malegs::train_field(get_world().scene, data, fc);
                save_scene(res.scene,
                           (dir / ("l" + std::to_string(level) + "_scene.mgs1")).string());
                save_loss_curve(res.loss_history,
                                (dir / ("l" + std::to_string(level) + "_field_loss.csv")).string());
            }
        });
    }

    std::string stage_query() {
        const std::string ae_dir = stage_train_ae();
        const std::string field_dir = stage_train_field();
        return run_stage("query", query_hash(), [&, this](const fs::path& dir) {
            const World& w = get_world();
            QueryContext ctx = make_query_context(field_dir, ae_dir);
            const std::vector<QueryLine> queries = resolve_queries();

            std::string record;
            for (const auto& q : queries)
                record += q.label + "\t" + (q.is_style ? "style" : std::to_string(q.class_id)) + "\n";
            write_file(dir / "queries.tsv", record);

            for (const auto& view : w.views) {
                std::vector<std::vector<Grid>> decoded(cfg.levels);
                for (int level = 0; level < cfg.levels; ++level)
                    decoded[level] = decoded_slots(ctx, level, view.index);
                for (const auto& q : queries) {
                    if (q.is_style) continue;  // style queries belong to style-vote
                    const QueryEmbedding qe = query_embedding(w.oracle, q);
                    ScoreMap fused = fused_score(ctx, decoded, qe);
                    char prefix[96];
                    std::snprintf(prefix, sizeof(prefix), "q_%s_v%03d", sanitize(q.label).c_str(),
                                  view.index);
                    save_grid(fused.values, (dir / (std::string(prefix) + "_score.mft1")).string());
                    const ScoreMap smoothed = smooth(fused, cfg.smooth_kernel);
                    save_grid(smoothed.values,
                              (dir / (std::string(prefix) + "_fused.mft1")).string());
                    const std::vector<uint8_t> mask = segment2d(smoothed, cfg.tau);
                    save_grid(grid_from_mask(mask, smoothed.values.height(), smoothed.values.width()),
                              (dir / (std::string(prefix) + "_mask.mft1")).string());
                }
            }
        });
    }

    std::string stage_eval() {
        const std::string query_dir = stage_query();
        return run_stage("eval", eval_hash(), [&, this](const fs::path& dir) {
            const World& w = get_world();
            const std::vector<QueryLine> queries = resolve_queries();

            // Evaluation views mirror the benchmark protocol: only
            // occluder-free photos carry annotations. Fall back to all
            // views if every photo is occluded.
            std::vector<const UnconstrainedView*> eval_views;
            for (const auto& view : w.views)
                if (view.transients.empty()) eval_views.push_back(&view);
            if (eval_views.empty())
                for (const auto& view : w.views) eval_views.push_back(&view);

            SegMetrics seg;
            std::string detail = "query,view,iou,pa,precision\n";
            char buf[160];
            for (const auto& q : queries) {
                if (q.is_style) continue;
                QueryMetrics mean_m;
                for (const auto* view : eval_views) {
                    char prefix[96];
                    std::snprintf(prefix, sizeof(prefix), "q_%s_v%03d",
                                  sanitize(q.label).c_str(), view->index);
                    const Grid mg =
                        load_grid((fs::path(query_dir) / (std::string(prefix) + "_mask.mft1")).string());
                    const std::vector<uint8_t> pred = mask_from_grid(mg);
                    const std::vector<uint8_t> gt = gt_mask(w, *view, q.class_id);
                    const QueryMetrics m = metrics(pred, gt);
                    std::snprintf(buf, sizeof(buf), "%s,%d,%.9g,%.9g,%.9g\n", q.label.c_str(),
                                  view->index, m.iou, m.pixel_accuracy, m.precision);
                    detail += buf;
                    mean_m.iou += m.iou;
                    mean_m.pixel_accuracy += m.pixel_accuracy;
                    mean_m.precision += m.precision;
                }
                const double n = static_cast<double>(eval_views.size());
                mean_m.iou /= n;
                mean_m.pixel_accuracy /= n;
                mean_m.precision /= n;
                seg.add(q.label, mean_m);
            }
            seg.finalize();

            std::string report = "query,iou,pa,precision\n";
            for (const auto& [label, m] : seg.per_query) {
                std::snprintf(buf, sizeof(buf), "%s,%.9g,%.9g,%.9g\n", label.c_str(), m.iou,
                              m.pixel_accuracy, m.precision);
                report += buf;
            }
            std::snprintf(buf, sizeof(buf), "mean,%.9g,%.9g,%.9g\n", seg.miou, seg.mpa, seg.mp);
            report += buf;
            write_file(dir / "report.csv", report);
            write_file(dir / "detail.csv", detail);
        });
    }

    std::string stage_seg3d() {
        const std::string ae_dir = stage_train_ae();
        const std::string field_dir = stage_train_field();
        return run_stage("seg3d", seg3d_hash(), [&, this](const fs::path& dir) {
            const World& w = get_world();
            Scene scene = load_scene((fs::path(field_dir) / "l0_scene.mgs1").string());
            const MlpParams params = load_params((fs::path(ae_dir) / "l0_ae.mae1").string());
            const CanonicalSet canon = canonical_set(w.oracle);

            std::string summary = "query,selected,precision,recall\n";
            char buf[160];
            for (const auto& q : resolve_queries()) {
                if (q.is_style) continue;
                const QueryEmbedding qe = query_embedding(w.oracle, q);
                const std::vector<uint8_t> mask = segment3d(scene, params, qe, canon, cfg.tau_3d);
                save_grid(grid_from_mask(mask, 1, static_cast<int>(mask.size())),
                          (dir / ("seg3d_" + sanitize(q.label) + ".mft1")).string());
                size_t tp = 0, fp = 0, fn = 0;
                for (size_t i = 0; i < mask.size(); ++i) {
                    const bool is_class = w.scene.gaussians[i].class_id == q.class_id;
                    tp += mask[i] && is_class;
                    fp += mask[i] && !is_class;
                    fn += !mask[i] && is_class;
                }
                const double prec = (tp + fp) == 0 ? 0.0 : double(tp) / (tp + fp);
                const double rec = (tp + fn) == 0 ? 1.0 : double(tp) / (tp + fn);
                std::snprintf(buf, sizeof(buf), "%s,%zu,%.9g,%.9g\n", q.label.c_str(), tp + fp,
                              prec, rec);
                summary += buf;
            }
            write_file(dir / "summary.csv", summary);
        });
    }

    std::string stage_style() {
        const std::string ae_dir = stage_train_ae();
        const std::string field_dir = stage_train_field();
        return run_stage("style-vote", style_hash(), [&, this](const fs::path& dir) {
            const World& w = get_world();
            std::vector<QueryLine> styles;
            for (const auto& q : resolve_queries())
                if (q.is_style) styles.push_back(q);
            if (styles.empty())
                throw std::runtime_error("style-vote needs at least one style query line");

            QueryContext ctx = make_query_context(field_dir, ae_dir);
            std::map<std::string, std::vector<ScoreMap>> per_style;
            for (const auto& view : w.views) {
                std::vector<std::vector<Grid>> decoded(cfg.levels);
                for (int level = 0; level < cfg.levels; ++level)
                    decoded[level] = decoded_slots(ctx, level, view.index);
                for (const auto& q : styles) {
                    const QueryEmbedding qe = query_embedding(w.oracle, q);
                    ScoreMap fused = smooth(fused_score(ctx, decoded, qe), cfg.smooth_kernel);
                    per_style[q.label].push_back(std::move(fused));
                }
            }
            const std::string winner = style_vote(per_style);

            std::string csv = "winner," + winner + "\n";
            csv += "style";
            for (size_t img = 0; img < w.views.size(); ++img)
                csv += ",view" + std::to_string(img);
            csv += "\n";
            for (const auto& [label, maps] : per_style) {
                csv += label;
                char buf[32];
                for (const auto& m : maps) {
                    double mx = 0.0;
                    for (size_t i = 0; i < m.values.size(); ++i)
                        mx = std::max(mx, static_cast<double>(m.values.data()[i]));
                    std::snprintf(buf, sizeof(buf), ",%.9g", mx);
                    csv += buf;
                }
                csv += "\n";
            }
            write_file(dir / "style_vote.csv", csv);
        });
    }
};

Pipeline::Pipeline(PipelineConfig cfg) : impl_(std::make_unique<Impl>(cfg)), cfg_(std::move(cfg)) {}
Pipeline::~Pipeline() = default;

const World& Pipeline::world() { return impl_->get_world(); }
std::string Pipeline::gen() { return impl_->stage_gen(); }
std::string Pipeline::features() { return impl_->stage_features(); }
std::string Pipeline::uncertainty() { return impl_->stage_uncertainty(); }
std::string Pipeline::train_ae() { return impl_->stage_train_ae(); }
std::string Pipeline::targets() { return impl_->stage_targets(); }
std::string Pipeline::train_field() { return impl_->stage_train_field(); }
std::string Pipeline::query() { return impl_->stage_query(); }
std::string Pipeline::seg3d() { return impl_->stage_seg3d(); }
std::string Pipeline::style_vote_stage() { return impl_->stage_style(); }

PipelineResult Pipeline::eval() {
    const std::string dir = impl_->stage_eval();
    PipelineResult res;
    res.out_dir = cfg_.out_dir;
    res.report_path = (fs::path(dir) / "report.csv").string();
    res.report_csv = read_file(res.report_path);

    // Recover the metrics from the report so cached and fresh runs agree
    // on the exact same numbers.
    std::istringstream is(res.report_csv);
    std::string line;
    std::getline(is, line);  // header
    while (std::getline(is, line)) {
        std::istringstream ls(line);
        std::string label, f1, f2, f3;
        std::getline(ls, label, ',');
        std::getline(ls, f1, ',');
        std::getline(ls, f2, ',');
        std::getline(ls, f3, ',');
        if (label == "mean") {
            res.seg.miou = std::stod(f1);
            res.seg.mpa = std::stod(f2);
            res.seg.mp = std::stod(f3);
        } else {
            res.seg.add(label, {std::stod(f1), std::stod(f2), std::stod(f3)});
        }
    }
    return res;
}

PipelineResult run_pipeline(const PipelineConfig& cfg) {
    Pipeline p(cfg);
    return p.eval();
}

PipelineConfig apply_variant(PipelineConfig cfg, const std::string& variant) {
    if (variant == "full") return cfg;
    if (variant == "no-multi-appearance") {
        // The plain language-field baseline: no appearance renders exist,
        // so the uncertainty maps (which need the self-appearance render)
        // vanish along with the extra slots.
        cfg.scene.num_slots = 1;
        cfg.use_tum = false;
        cfg.use_aum = false;
        return cfg;
    }
    if (variant == "no-tum") {
        cfg.use_tum = false;
        return cfg;
    }
    if (variant == "no-aum") {
        cfg.use_aum = false;
        return cfg;
    }
    if (variant == "no-bg-filter") {
        cfg.use_bg_filter = false;
        return cfg;
    }
    if (variant == "ens-imgmax") {
        cfg.ensemble = "imgmax";
        return cfg;
    }
    if (variant == "ens-pixmax") {
        cfg.ensemble = "pixmax";
        return cfg;
    }
    if (variant == "ens-pixavg") {
        cfg.ensemble = "pixavg";
        return cfg;
    }
    if (variant == "ens-pixweighted") {
        cfg.ensemble = "pixweighted";
        return cfg;
    }
    throw ConfigError("unknown ablation variant: " + variant);
}

std::vector<AblationRow> ablation_suite(const PipelineConfig& base,
                                        const std::vector<std::string>& variants) {
    std::vector<std::string> names = variants;
    if (names.empty())
        names = {"full",         "no-multi-appearance", "no-tum",
                 "no-aum",       "no-bg-filter",        "ens-imgmax",
                 "ens-pixmax",   "ens-pixavg",          "ens-pixweighted"};

    std::vector<AblationRow> rows;
    for (const auto& name : names) {
        const PipelineConfig cfg = apply_variant(base, name);
        const PipelineResult res = run_pipeline(cfg);
        rows.push_back({name, res.seg.miou, res.seg.mpa, res.seg.mp});
    }

    const fs::path dir = fs::path(base.out_dir) / "ablate";
    fs::create_directories(dir);
    write_file(dir / "comparison.csv", ablation_report_csv(rows));
    return rows;
}

std::string ablation_report_csv(const std::vector<AblationRow>& rows) {
    std::string csv = "variant,miou,mpa,mp\n";
    char buf[160];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof(buf), "%s,%.9g,%.9g,%.9g\n", r.variant.c_str(), r.miou, r.mpa,
                      r.mp);
        csv += buf;
    }
    return csv;
}

}  // namespace malegs
