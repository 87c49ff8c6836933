#include "malegs/config.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "malegs/query.hpp"

namespace malegs {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

std::string format_double(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

}  // namespace

ConfigMap ConfigMap::parse(const std::string& text, const std::string& origin) {
    ConfigMap cfg;
    cfg.origin_ = origin;
    const std::string body = trim(text);
    if (!body.empty() && body[0] == '{') {
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(body);
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError(origin + ": bad JSON: " + e.what());
        }
        if (!j.is_object()) throw ConfigError(origin + ": top-level JSON must be an object");
        for (auto& [key, value] : j.items()) {
            if (value.is_string())
                cfg.values_[key] = value.get<std::string>();
            else if (value.is_boolean())
                cfg.values_[key] = value.get<bool>() ? "true" : "false";
            else if (value.is_number_integer())
                cfg.values_[key] = std::to_string(value.get<long long>());
            else if (value.is_number_unsigned())
                cfg.values_[key] = std::to_string(value.get<unsigned long long>());
            else if (value.is_number_float())
                cfg.values_[key] = format_double(value.get<double>());
            else if (value.is_array()) {
                std::string joined;
                for (const auto& item : value) {
                    if (!joined.empty()) joined += ",";
                    if (item.is_number_integer())
                        joined += std::to_string(item.get<long long>());
                    else if (item.is_number_float())
                        joined += format_double(item.get<double>());
                    else if (item.is_string())
                        joined += item.get<std::string>();
                    else
                        throw ConfigError(origin + ": unsupported array element for " + key);
                }
                cfg.values_[key] = joined;
            } else {
                throw ConfigError(origin + ": unsupported value type for " + key);
            }
        }
        return cfg;
    }

    std::istringstream is(text);
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected key = value");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty()) throw ConfigError(origin + ":" + std::to_string(lineno) + ": empty key");
        cfg.values_[key] = value;
    }
    return cfg;
}

ConfigMap ConfigMap::load(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config: " + path);
    std::stringstream buf;
    buf << is.rdbuf();
    return parse(buf.str(), path);
}

std::string ConfigMap::get_string(const std::string& key, const std::string& def) const {
    auto it = values_.find(key);
    return it == values_.end() ? def : it->second;
}

int ConfigMap::get_int(const std::string& key, int def) const {
    auto it = values_.find(key);
    if (it == values_.end()) return def;
    try {
        return std::stoi(it->second);
    } catch (...) {
        throw ConfigError(origin_ + ": key " + key + " is not an integer: " + it->second);
    }
}

uint64_t ConfigMap::get_u64(const std::string& key, uint64_t def) const {
    auto it = values_.find(key);
    if (it == values_.end()) return def;
    try {
        return std::stoull(it->second);
    } catch (...) {
        throw ConfigError(origin_ + ": key " + key + " is not an unsigned integer: " + it->second);
    }
}

double ConfigMap::get_double(const std::string& key, double def) const {
    auto it = values_.find(key);
    if (it == values_.end()) return def;
    try {
        return std::stod(it->second);
    } catch (...) {
        throw ConfigError(origin_ + ": key " + key + " is not a number: " + it->second);
    }
}

bool ConfigMap::get_bool(const std::string& key, bool def) const {
    auto it = values_.find(key);
    if (it == values_.end()) return def;
    std::string v = it->second;
    std::transform(v.begin(), v.end(), v.begin(), ::tolower);
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw ConfigError(origin_ + ": key " + key + " is not a boolean: " + it->second);
}

std::vector<int> ConfigMap::get_int_list(const std::string& key,
                                         const std::vector<int>& def) const {
    auto it = values_.find(key);
    if (it == values_.end()) return def;
    std::vector<int> out;
    std::stringstream ss(it->second);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (item.empty()) continue;
        try {
            out.push_back(std::stoi(item));
        } catch (...) {
            throw ConfigError(origin_ + ": key " + key + " is not an int list: " + it->second);
        }
    }
    return out;
}

SceneSpec scene_spec_from_config(const ConfigMap& cfg) {
    SceneSpec spec;
    spec.seed = cfg.get_u64("seed", spec.seed);
    spec.num_gaussians = cfg.get_int("num_gaussians", spec.num_gaussians);
    spec.classes = cfg.get_int("classes", spec.classes);
    spec.views = cfg.get_int("views", spec.views);
    spec.width = cfg.get_int("width", spec.width);
    spec.height = cfg.get_int("height", spec.height);
    spec.d_a = cfg.get_int("d_a", spec.d_a);
    spec.feature_dim_high = cfg.get_int("D", spec.feature_dim_high);
    spec.feature_dim_low = cfg.get_int("C", spec.feature_dim_low);
    spec.num_slots = cfg.get_int("N", spec.num_slots);
    spec.sigma_a = cfg.get_double("sigma_a", spec.sigma_a);
    spec.transient_rate = cfg.get_double("transient_rate", spec.transient_rate);
    spec.eps_q = cfg.get_double("eps_q", spec.eps_q);
    spec.eps_d = cfg.get_double("eps_d", spec.eps_d);
    if (spec.num_slots < 1) throw ConfigError("N must be >= 1");
    if (spec.width < 1 || spec.height < 1) throw ConfigError("resolution must be positive");
    return spec;
}

std::vector<int> PipelineConfig::ae_hidden_effective() const {
    if (!ae_hidden.empty()) return ae_hidden;
    const int d = scene.feature_dim_high;
    const int c = scene.feature_dim_low;
    if (d == 512) return {256, 128, 32};
    std::vector<int> h;
    int w = d / 2;
    while (static_cast<int>(h.size()) < 3 && w > std::max(2 * c, 8)) {
        h.push_back(w);
        w /= 2;
    }
    return h;
}

std::map<std::string, std::string> PipelineConfig::canonical() const {
    std::map<std::string, std::string> m;
    m["scene.seed"] = std::to_string(scene.seed);
    m["scene.num_gaussians"] = std::to_string(scene.num_gaussians);
    m["scene.classes"] = std::to_string(scene.classes);
    m["scene.views"] = std::to_string(scene.views);
    m["scene.width"] = std::to_string(scene.width);
    m["scene.height"] = std::to_string(scene.height);
    m["scene.d_a"] = std::to_string(scene.d_a);
    m["scene.D"] = std::to_string(scene.feature_dim_high);
    m["scene.C"] = std::to_string(scene.feature_dim_low);
    m["scene.N"] = std::to_string(scene.num_slots);
    m["scene.sigma_a"] = format_double(scene.sigma_a);
    m["scene.transient_rate"] = format_double(scene.transient_rate);
    m["scene.eps_q"] = format_double(scene.eps_q);
    m["scene.eps_d"] = format_double(scene.eps_d_effective());
    m["tau"] = format_double(tau);
    m["tau_u"] = format_double(tau_u);
    m["tau_3d"] = format_double(tau_3d);
    m["smooth_kernel"] = std::to_string(smooth_kernel);
    m["levels"] = std::to_string(levels);
    m["ae_epochs"] = std::to_string(ae_epochs);
    m["ae_lr"] = format_double(ae_lr);
    m["ae_batch"] = std::to_string(ae_batch);
    {
        std::string h;
        for (int v : ae_hidden_effective()) {
            if (!h.empty()) h += ",";
            h += std::to_string(v);
        }
        m["ae_hidden"] = h;
    }
    m["field_iterations"] = std::to_string(field_iterations);
    m["field_lr"] = format_double(field_lr);
    m["use_tum"] = use_tum ? "true" : "false";
    m["use_aum"] = use_aum ? "true" : "false";
    m["use_bg_filter"] = use_bg_filter ? "true" : "false";
    m["ensemble"] = ensemble;
    m["queries"] = queries_path;
    return m;
}

PipelineConfig pipeline_config_from_map(const ConfigMap& cfg, const std::string& base_dir,
                                        int64_t seed_override) {
    ConfigMap merged;
    const std::string scene_path = cfg.get_string("scene_spec", "");
    if (!scene_path.empty()) {
        std::filesystem::path p(scene_path);
        if (p.is_relative() && !base_dir.empty()) p = std::filesystem::path(base_dir) / p;
        merged = ConfigMap::load(p.string());
    }
    for (const auto& [k, v] : cfg.raw()) merged.set(k, v);
    if (seed_override >= 0) merged.set("seed", std::to_string(seed_override));

    PipelineConfig pc;
    pc.scene = scene_spec_from_config(merged);
    pc.tau = merged.get_double("tau", pc.tau);
    pc.tau_u = merged.get_double("tau_u", pc.tau_u);
    pc.tau_3d = merged.get_double("tau_3d", pc.tau_3d);
    pc.smooth_kernel = merged.get_int("smooth_kernel", pc.smooth_kernel);
    pc.levels = merged.get_int("levels", pc.levels);
    pc.ae_epochs = merged.get_int("ae_epochs", pc.ae_epochs);
    pc.ae_lr = merged.get_double("ae_lr", pc.ae_lr);
    pc.ae_batch = merged.get_int("ae_batch", pc.ae_batch);
    pc.ae_hidden = merged.get_int_list("ae_hidden", {});
    pc.field_iterations = merged.get_int("field_iterations", pc.field_iterations);
    pc.field_lr = merged.get_double("field_lr", pc.field_lr);
    pc.use_tum = merged.get_bool("use_tum", pc.use_tum);
    pc.use_aum = merged.get_bool("use_aum", pc.use_aum);
    pc.use_bg_filter = merged.get_bool("use_bg_filter", pc.use_bg_filter);
    pc.ensemble = merged.get_string("ensemble", pc.ensemble);
    ensemble_mode_from_string(pc.ensemble);  // validate early
    pc.queries_path = merged.get_string("queries", "");
    if (!pc.queries_path.empty()) {
        std::filesystem::path p(pc.queries_path);
        if (p.is_relative() && !base_dir.empty())
            pc.queries_path = (std::filesystem::path(base_dir) / p).string();
    }
    pc.out_dir = merged.get_string("out_dir", pc.out_dir);

    if (pc.tau <= 0.0 || pc.tau >= 1.0) throw ConfigError("tau must lie in (0,1)");
    if (pc.tau_u < 0.0 || pc.tau_u > 1.0) throw ConfigError("tau_u must lie in [0,1]");
    if (pc.levels < 1) throw ConfigError("levels must be >= 1");
    if (pc.ae_epochs < 0 || pc.field_iterations < 0)
        throw ConfigError("epoch/iteration counts must be non-negative");
    if (pc.smooth_kernel < 1) throw ConfigError("smooth_kernel must be >= 1");
    return pc;
}

PipelineConfig load_pipeline_config(const std::string& path, int64_t seed_override) {
    const ConfigMap cfg = ConfigMap::load(path);
    const std::string base = std::filesystem::path(path).parent_path().string();
    return pipeline_config_from_map(cfg, base, seed_override);
}

}  // namespace malegs
