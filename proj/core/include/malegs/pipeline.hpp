#pragma once

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "malegs/config.hpp"
#include "malegs/metrics.hpp"
#include "malegs/wildscene.hpp"

namespace malegs {

struct StageError : std::runtime_error {
    std::string stage;
    StageError(const std::string& stage_name, const std::string& cause)
        : std::runtime_error("stage " + stage_name + " failed: " + cause), stage(stage_name) {}
};

struct PipelineResult {
    SegMetrics seg;
    std::string report_csv;   // exact bytes of report.csv
    std::string report_path;
    std::string out_dir;
};

// Stage-wise execution with a content-addressed cache: every stage lands in
// <out_dir>/<stage>-<hash>/ where the hash chains the stage's own config
// keys with its upstream hashes. A finished directory is reused as-is;
// in-flight work happens in a temp directory renamed into place.
class Pipeline {
public:
    explicit Pipeline(PipelineConfig cfg);
    ~Pipeline();

    const PipelineConfig& config() const { return cfg_; }

    // Each stage returns its artifact directory, running precursors first.
    std::string gen();
    std::string features();
    std::string uncertainty();
    std::string train_ae();
    std::string targets();
    std::string train_field();
    std::string query();
    PipelineResult eval();

    std::string seg3d();
    std::string style_vote_stage();

    // The synthetic world is a pure function of the scene spec and is
    // rebuilt in memory on demand; expensive artifacts flow through files.
    const World& world();

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
    PipelineConfig cfg_;
};

PipelineResult run_pipeline(const PipelineConfig& cfg);

struct AblationRow {
    std::string variant;
    double miou = 0.0, mpa = 0.0, mp = 0.0;
};

// Known variant names: full, no-multi-appearance, no-tum, no-aum,
// no-bg-filter, ens-imgmax, ens-pixmax, ens-pixavg, ens-pixweighted.
// An empty list runs all of them. Variants share cached stages whenever
// their hash chains agree.
std::vector<AblationRow> ablation_suite(const PipelineConfig& base,
                                        const std::vector<std::string>& variants);
std::string ablation_report_csv(const std::vector<AblationRow>& rows);
PipelineConfig apply_variant(PipelineConfig cfg, const std::string& variant);

}  // namespace malegs
