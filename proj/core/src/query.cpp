#include "malegs/query.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace malegs {

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

double dot_px(const float* feat, const Eigen::VectorXd& v) {
    double acc = 0.0;
    for (Eigen::Index i = 0; i < v.size(); ++i) acc += feat[i] * v[i];
    return acc;
}

double map_max(const Grid& g) {
    double best = -std::numeric_limits<double>::infinity();
    for (size_t i = 0; i < g.size(); ++i) best = std::max(best, static_cast<double>(g.data()[i]));
    return best;
}

}  // namespace

ScoreMap relevancy_map(const Grid& decoded, const QueryEmbedding& q, const CanonicalSet& canon) {
    if (canon.items.empty()) throw std::invalid_argument("relevancy_map: empty canonical set");
    if (decoded.channels() != q.vector.size())
        throw std::invalid_argument("relevancy_map: feature dim mismatch");

    ScoreMap out{Grid(decoded.height(), decoded.width(), 1), q.label, -1};
    const int d = decoded.channels();
    const size_t npx = static_cast<size_t>(decoded.height()) * decoded.width();
    for (size_t p = 0; p < npx; ++p) {
        const float* f = decoded.data() + p * d;
        const double qdot = dot_px(f, q.vector);
        double worst_margin = std::numeric_limits<double>::infinity();
        for (const auto& c : canon.items)
            worst_margin = std::min(worst_margin, qdot - dot_px(f, c.vector));
        out.values.data()[p] = static_cast<float>(sigmoid(worst_margin));
    }
    return out;
}

ScoreMap background_score(const Grid& decoded, const QueryEmbedding& q,
                          const BackgroundTexts& bg) {
    ScoreMap out{Grid(decoded.height(), decoded.width(), 1), q.label, -1};
    const int d = decoded.channels();
    const size_t npx = static_cast<size_t>(decoded.height()) * decoded.width();
    for (size_t p = 0; p < npx; ++p) {
        const float* f = decoded.data() + p * d;
        const double qdot = dot_px(f, q.vector);
        const double bdot = std::max(dot_px(f, bg.sky.vector), dot_px(f, bg.background.vector));
        // 1 - max_b sigmoid(b.F - q.F) collapses to sigmoid(q.F - max_b b.F).
        out.values.data()[p] = static_cast<float>(sigmoid(qdot - bdot));
    }
    return out;
}

EnsembleMode ensemble_mode_from_string(const std::string& name) {
    if (name == "weighted" || name == "weighted-max") return EnsembleMode::WeightedMax;
    if (name == "imgmax") return EnsembleMode::ImgLvlMax;
    if (name == "pixmax") return EnsembleMode::PixMax;
    if (name == "pixavg") return EnsembleMode::PixAvg;
    if (name == "pixweighted") return EnsembleMode::PixWeightedAvg;
    throw std::invalid_argument("unknown ensemble mode: " + name);
}

ScoreMap ensemble(const std::vector<ScoreMap>& maps, const ScoreMap& bg, EnsembleMode mode) {
    if (maps.empty()) throw std::invalid_argument("ensemble: no score maps");
    for (const auto& m : maps)
        if (!m.values.same_shape(bg.values))
            throw std::invalid_argument("ensemble: shape mismatch");

    const size_t npx = bg.values.size();
    std::vector<Grid> masked;
    masked.reserve(maps.size());
    for (const auto& m : maps) {
        Grid g = m.values;
        for (size_t p = 0; p < npx; ++p) g.data()[p] *= bg.values.data()[p];
        masked.push_back(std::move(g));
    }

    ScoreMap out{Grid(bg.values.height(), bg.values.width(), 1), maps.front().query_label, -1};
    switch (mode) {
        case EnsembleMode::WeightedMax: {
            std::vector<double> maxes(masked.size());
            double total = 0.0;
            for (size_t i = 0; i < masked.size(); ++i) {
                maxes[i] = map_max(masked[i]);
                total += maxes[i];
            }
            std::vector<double> w(masked.size());
            for (size_t i = 0; i < masked.size(); ++i)
                w[i] = total > 0.0 ? maxes[i] / total : 1.0 / masked.size();
            for (size_t p = 0; p < npx; ++p) {
                double acc = 0.0;
                for (size_t i = 0; i < masked.size(); ++i) acc += w[i] * masked[i].data()[p];
                out.values.data()[p] = static_cast<float>(acc);
            }
            break;
        }
        case EnsembleMode::ImgLvlMax: {
            size_t best = 0;
            double best_max = -1.0;
            for (size_t i = 0; i < masked.size(); ++i) {
                const double m = map_max(masked[i]);
                if (m > best_max) {
                    best_max = m;
                    best = i;
                }
            }
            out.values = masked[best];
            break;
        }
        case EnsembleMode::PixMax: {
            for (size_t p = 0; p < npx; ++p) {
                float best = 0.0f;
                for (const auto& m : masked) best = std::max(best, m.data()[p]);
                out.values.data()[p] = best;
            }
            break;
        }
        case EnsembleMode::PixAvg: {
            for (size_t p = 0; p < npx; ++p) {
                double acc = 0.0;
                for (const auto& m : masked) acc += m.data()[p];
                out.values.data()[p] = static_cast<float>(acc / masked.size());
            }
            break;
        }
        case EnsembleMode::PixWeightedAvg: {
            for (size_t p = 0; p < npx; ++p) {
                double total = 0.0;
                for (const auto& m : masked) total += m.data()[p];
                double acc = 0.0;
                for (const auto& m : masked) {
                    const double w = total > 0.0 ? m.data()[p] / total : 1.0 / masked.size();
                    acc += w * m.data()[p];
                }
                out.values.data()[p] = static_cast<float>(acc);
            }
            break;
        }
    }
    return out;
}

ScoreMap smooth(const ScoreMap& map, int kernel) {
    if (kernel < 1) throw std::invalid_argument("smooth: kernel must be >= 1");
    const int h = map.values.height();
    const int w = map.values.width();
    if (kernel > h || kernel > w) throw std::invalid_argument("smooth: kernel larger than image");
    if (kernel == 1) return map;

    const int lo = -(kernel / 2);
    const int hi = kernel - 1 - kernel / 2;

    // Clamp-to-edge replication makes the 2D box separable.
    Grid tmp(h, w, 1);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            double acc = 0.0;
            for (int dx = lo; dx <= hi; ++dx)
                acc += map.values.at(y, std::clamp(x + dx, 0, w - 1), 0);
            tmp.at(y, x, 0) = static_cast<float>(acc / kernel);
        }
    }
    ScoreMap out{Grid(h, w, 1), map.query_label, map.slot};
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            double acc = 0.0;
            for (int dy = lo; dy <= hi; ++dy) acc += tmp.at(std::clamp(y + dy, 0, h - 1), x, 0);
            out.values.at(y, x, 0) = static_cast<float>(acc / kernel);
        }
    }
    return out;
}

std::vector<uint8_t> segment2d(const ScoreMap& fused, double tau) {
    std::vector<uint8_t> mask(fused.values.size());
    for (size_t p = 0; p < mask.size(); ++p)
        mask[p] = fused.values.data()[p] > tau ? 1 : 0;
    return mask;
}

int hierarchical_select(const std::vector<ScoreMap>& levels) {
    if (levels.empty()) throw std::invalid_argument("hierarchical_select: no levels");
    int best = 0;
    double best_max = map_max(levels[0].values);
    for (size_t i = 1; i < levels.size(); ++i) {
        const double m = map_max(levels[i].values);
        if (m > best_max) {
            best_max = m;
            best = static_cast<int>(i);
        }
    }
    return best;
}

ScoreMap hierarchical_query(const std::vector<ScoreMap>& levels) {
    return levels[hierarchical_select(levels)];
}

std::vector<uint8_t> segment3d(const Scene& scene, const MlpParams& decoder_params,
                               const QueryEmbedding& q, const CanonicalSet& canon, double tau) {
    if (canon.items.empty()) throw std::invalid_argument("segment3d: empty canonical set");
    std::vector<uint8_t> mask(scene.gaussians.size(), 0);
    if (scene.gaussians.empty()) return mask;

    const int slots = scene.num_slots;
    for (size_t gi = 0; gi < scene.gaussians.size(); ++gi) {
        Eigen::MatrixXd latents(scene.feature_dim_low, slots);
        for (int n = 0; n < slots; ++n)
            latents.col(n) = scene.gaussians[gi].lang_features.row(n).transpose();
        const Eigen::MatrixXd decoded = decode(decoder_params, latents);

        Eigen::VectorXd rel(slots);
        for (int n = 0; n < slots; ++n) {
            const double qdot = q.vector.dot(decoded.col(n));
            double worst = std::numeric_limits<double>::infinity();
            for (const auto& c : canon.items)
                worst = std::min(worst, qdot - c.vector.dot(decoded.col(n)));
            rel[n] = sigmoid(worst);
        }
        // Same max-weighted fusion, degenerated to 1x1 maps: each slot's
        // scalar is its own maximum.
        const double total = rel.sum();
        const double fused = total > 0.0 ? rel.squaredNorm() / total : 0.0;
        mask[gi] = fused > tau ? 1 : 0;
    }
    return mask;
}

std::string style_vote(const std::map<std::string, std::vector<ScoreMap>>& maps_per_style) {
    if (maps_per_style.empty()) throw std::invalid_argument("style_vote: no styles");
    const size_t num_images = maps_per_style.begin()->second.size();
    if (num_images == 0) throw std::invalid_argument("style_vote: no images");
    for (const auto& [label, maps] : maps_per_style)
        if (maps.size() != num_images)
            throw std::invalid_argument("style_vote: ragged image count for " + label);

    std::map<std::string, int> votes;
    for (size_t img = 0; img < num_images; ++img) {
        std::string best_label;
        double best = -std::numeric_limits<double>::infinity();
        // std::map iterates labels in lexicographic order, so with strict
        // comparison the first winner is the tie-break rule.
        for (const auto& [label, maps] : maps_per_style) {
            const double m = map_max(maps[img].values);
            if (m > best) {
                best = m;
                best_label = label;
            }
        }
        votes[best_label]++;
    }
    std::string winner;
    int most = -1;
    for (const auto& [label, count] : votes) {
        if (count > most) {
            most = count;
            winner = label;
        }
    }
    return winner;
}

std::vector<QueryLine> load_query_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open query file: " + path);
    std::vector<QueryLine> out;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty() || line[0] == '#') continue;
        const size_t tab = line.find('\t');
        if (tab == std::string::npos)
            throw std::runtime_error("query file: missing tab in line: " + line);
        QueryLine q;
        q.label = line.substr(0, tab);
        const std::string rest = line.substr(tab + 1);
        if (rest == "style") {
            q.is_style = true;
        } else {
            q.class_id = std::stoi(rest);
        }
        out.push_back(std::move(q));
    }
    return out;
}

}  // namespace malegs
