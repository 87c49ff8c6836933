#pragma once

#include <Eigen/Dense>
#include <map>
#include <string>
#include <vector>

#include "malegs/autoencoder.hpp"
#include "malegs/grid.hpp"
#include "malegs/scene.hpp"

namespace malegs {

struct QueryEmbedding {
    Eigen::VectorXd vector;  // unit norm
    std::string label;
};

// Fixed contrast phrases the relevancy softmax competes against.
struct CanonicalSet {
    std::vector<QueryEmbedding> items;
};

struct BackgroundTexts {
    QueryEmbedding sky;
    QueryEmbedding background;
};

// H x W relevancy grid in (0,1).
struct ScoreMap {
    Grid values;  // K = 1
    std::string query_label;
    int slot = -1;  // -1 means fused
};

// Per pixel: min over canonicals of exp(q.F) / (exp(q.F) + exp(c.F)),
// evaluated as sigmoid(q.F - max_c c.F).
ScoreMap relevancy_map(const Grid& decoded, const QueryEmbedding& q, const CanonicalSet& canon);

// Inverted background relevancy: 1 - max over {sky, background} of their
// relevancy with the actual query as the sole canonical. High where the
// pixel looks like the query, low where it looks like sky/background.
ScoreMap background_score(const Grid& decoded, const QueryEmbedding& q,
                          const BackgroundTexts& bg);

enum class EnsembleMode {
    WeightedMax,     // per-map global-max weights (the shipped fusion)
    ImgLvlMax,       // keep the single map with the largest max
    PixMax,          // per-pixel max
    PixAvg,          // per-pixel mean
    PixWeightedAvg,  // max-weighting applied per pixel instead of per map
};

EnsembleMode ensemble_mode_from_string(const std::string& name);

// Multiplies every map by the background score, then fuses. WeightedMax
// weights are max(m_i) / sum_j max(m_j); all-zero maxes fall back to
// uniform weights.
ScoreMap ensemble(const std::vector<ScoreMap>& maps, const ScoreMap& bg,
                  EnsembleMode mode = EnsembleMode::WeightedMax);

// Box mean with clamp-to-edge padding; even kernels anchor the window at
// offsets [-k/2, k/2 - 1] ([-10, +9] for the default 20).
ScoreMap smooth(const ScoreMap& map, int kernel = 20);

std::vector<uint8_t> segment2d(const ScoreMap& fused, double tau = 0.4);

// Index of the level whose global maximum is largest; ties go to the
// lowest level.
int hierarchical_select(const std::vector<ScoreMap>& levels);
ScoreMap hierarchical_query(const std::vector<ScoreMap>& levels);

// Open-vocabulary selection of whole Gaussians: decode all N slots, score
// each against the query, fuse with each slot's scalar as its own weight,
// threshold. The background filter is a pixel-domain tool and is omitted.
std::vector<uint8_t> segment3d(const Scene& scene, const MlpParams& decoder_params,
                               const QueryEmbedding& q, const CanonicalSet& canon, double tau);

// Per image, vote for the style whose fused map has the largest maximum;
// the winner is the most frequent vote. All ties break lexicographically.
std::string style_vote(const std::map<std::string, std::vector<ScoreMap>>& maps_per_style);

// Query spec file: one query per line, "label<TAB>class_id" for class
// queries or "label<TAB>style" for style queries. '#' starts a comment.
struct QueryLine {
    std::string label;
    int class_id = -1;
    bool is_style = false;
};
std::vector<QueryLine> load_query_file(const std::string& path);

}  // namespace malegs
