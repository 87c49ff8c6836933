// Command-line front end for the multi-appearance language-splatting
// pipeline. Every subcommand ensures its upstream stages first, so any of
// them can run cold against just a config file.

#include <CLI11.hpp>
#include <cstdio>
#include <string>
#include <vector>

#include "malegs/config.hpp"
#include "malegs/pipeline.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitStage = 3;

struct CommonArgs {
    std::string config;
    std::string out;
    int64_t seed = -1;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
    cmd->add_option("--config", args.config, "pipeline config file")->required();
    cmd->add_option("--out", args.out, "artifact output directory");
    cmd->add_option("--seed", args.seed, "override the scene seed");
}

malegs::PipelineConfig load(const CommonArgs& args) {
    malegs::PipelineConfig cfg = malegs::load_pipeline_config(args.config, args.seed);
    if (!args.out.empty()) cfg.out_dir = args.out;
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"multi-appearance language-embedded Gaussian splatting pipeline"};
    app.require_subcommand(1);

    struct Sub {
        const char* name;
        const char* help;
    };
    const std::vector<Sub> stages = {
        {"gen", "generate the synthetic scene, views and images"},
        {"features", "extract multi-appearance feature maps"},
        {"uncertainty", "compute normalized appearance/transient uncertainty maps"},
        {"train-ae", "train the uncertainty-aware feature autoencoder"},
        {"targets", "encode feature maps into latent optimization targets"},
        {"train-field", "optimize the per-Gaussian language feature slots"},
        {"query", "run open-vocabulary queries and write score maps/masks"},
        {"eval", "score predicted masks against ground truth"},
        {"ablate", "run the ablation variants and write a comparison table"},
        {"style-vote", "winner-takes-all style recognition over style queries"},
        {"seg3d", "open-vocabulary segmentation at the Gaussian level"},
    };

    std::map<std::string, CommonArgs> args;
    std::string variants_arg;
    for (const auto& s : stages) {
        CLI::App* cmd = app.add_subcommand(s.name, s.help);
        add_common(cmd, args[s.name]);
        if (std::string(s.name) == "ablate")
            cmd->add_option("--variants", variants_arg, "comma-separated variant names");
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return e.get_exit_code() == 0 ? kExitOk : kExitConfig;
    }

    const std::string cmd = app.get_subcommands().front()->get_name();
    try {
        const malegs::PipelineConfig cfg = load(args[cmd]);
        malegs::Pipeline pipeline(cfg);

        if (cmd == "gen") {
            std::printf("%s\n", pipeline.gen().c_str());
        } else if (cmd == "features") {
            std::printf("%s\n", pipeline.features().c_str());
        } else if (cmd == "uncertainty") {
            std::printf("%s\n", pipeline.uncertainty().c_str());
        } else if (cmd == "train-ae") {
            std::printf("%s\n", pipeline.train_ae().c_str());
        } else if (cmd == "targets") {
            std::printf("%s\n", pipeline.targets().c_str());
        } else if (cmd == "train-field") {
            std::printf("%s\n", pipeline.train_field().c_str());
        } else if (cmd == "query") {
            std::printf("%s\n", pipeline.query().c_str());
        } else if (cmd == "eval") {
            const malegs::PipelineResult res = pipeline.eval();
            std::printf("%s", res.report_csv.c_str());
            std::fprintf(stderr, "report: %s\n", res.report_path.c_str());
        } else if (cmd == "ablate") {
            std::vector<std::string> names;
            std::stringstream ss(variants_arg);
            std::string item;
            while (std::getline(ss, item, ','))
                if (!item.empty()) names.push_back(item);
            const auto rows = malegs::ablation_suite(cfg, names);
            std::printf("%s", malegs::ablation_report_csv(rows).c_str());
        } else if (cmd == "style-vote") {
            std::printf("%s\n", pipeline.style_vote_stage().c_str());
        } else if (cmd == "seg3d") {
            std::printf("%s\n", pipeline.seg3d().c_str());
        }
    } catch (const malegs::ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return kExitConfig;
    } catch (const malegs::StageError& e) {
        std::fprintf(stderr, "%s\n", e.what());
        return kExitStage;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitStage;
    }
    return kExitOk;
}
