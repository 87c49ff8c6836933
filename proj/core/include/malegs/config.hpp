#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "malegs/wildscene.hpp"

namespace malegs {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Flat key -> string map parsed from either "key = value" lines or a JSON
// object (sniffed by the first non-space byte).
class ConfigMap {
public:
    static ConfigMap parse(const std::string& text, const std::string& origin = "<config>");
    static ConfigMap load(const std::string& path);

    bool has(const std::string& key) const { return values_.count(key) != 0; }
    std::string get_string(const std::string& key, const std::string& def) const;
    int get_int(const std::string& key, int def) const;
    uint64_t get_u64(const std::string& key, uint64_t def) const;
    double get_double(const std::string& key, double def) const;
    bool get_bool(const std::string& key, bool def) const;
    std::vector<int> get_int_list(const std::string& key, const std::vector<int>& def) const;

    void set(const std::string& key, const std::string& value) { values_[key] = value; }
    const std::map<std::string, std::string>& raw() const { return values_; }

private:
    std::map<std::string, std::string> values_;
    std::string origin_;
};

SceneSpec scene_spec_from_config(const ConfigMap& cfg);

// Everything run_pipeline needs: a resolved scene spec plus every stage
// hyperparameter and toggle. Scene keys may live in a separate file named
// by scene_spec (pipeline keys of the same name override it).
struct PipelineConfig {
    SceneSpec scene;

    double tau = 0.4;
    double tau_u = 0.9;
    double tau_3d = 0.6;
    int smooth_kernel = 20;
    int levels = 1;

    int ae_epochs = 100;
    double ae_lr = 1e-4;
    int ae_batch = 32;
    std::vector<int> ae_hidden;  // empty = derived default

    int field_iterations = 30000;
    double field_lr = 0.0025;

    bool use_tum = true;
    bool use_aum = true;
    bool use_bg_filter = true;
    std::string ensemble = "weighted";

    std::string queries_path;  // empty = one query per object class
    std::string out_dir = "out";

    std::vector<int> ae_hidden_effective() const;

    // Canonical "key=value" serialization of every resolved knob; the
    // content-addressed stage cache hashes subsets of these lines.
    std::map<std::string, std::string> canonical() const;
};

// Loads the pipeline config; when the file carries scene_spec = <path>,
// that file is parsed first and pipeline-level keys override it.
// seed_override (when >= 0) replaces the scene seed.
PipelineConfig load_pipeline_config(const std::string& path, int64_t seed_override = -1);
PipelineConfig pipeline_config_from_map(const ConfigMap& cfg, const std::string& base_dir,
                                        int64_t seed_override = -1);

}  // namespace malegs
