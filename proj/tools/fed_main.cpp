#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "fed/config.hpp"
#include "fed/errors.hpp"
#include "fed/pipeline.hpp"

namespace {

enum ExitCode { kOk = 0, kFailure = 1, kConfig = 2, kArtifact = 3, kNumeric = 4 };

}  // namespace

int main(int argc, char** argv) {
    using namespace fed;
    CLI::App app{"Distill a sampled classifier ensemble into a noise-injected generator"};
    app.require_subcommand(1);

    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::string out_dir;
    bool quiet = false;
    app.add_option("--config", config_path, "experiment config (JSON); defaults apply when omitted");
    app.add_option("--seed", seed, "root seed, overrides the config");
    app.add_option("--out", out_dir, "run directory, overrides the config");
    app.add_flag("--quiet", quiet, "suppress progress messages");

    struct Command {
        const char* name;
        const char* help;
        nlohmann::json (*run)(const pipeline::Context&);
    };
    const Command commands[] = {
        {"make-data", "generate the dataset, its 80/20 split and the OOD inputs", pipeline::cmd_make_data},
        {"train-ensemble", "sample the cSGHMC ensemble and store its predictions", pipeline::cmd_train_ensemble},
        {"make-mixup", "build the mixup auxiliary set and ensemble predictions on it", pipeline::cmd_make_mixup},
        {"distill", "train the generator by MMD distillation", pipeline::cmd_distill},
        {"evaluate", "accuracy, agreement and ECE report", pipeline::cmd_evaluate},
        {"ood", "knowledge-uncertainty ROC curves and AUC", pipeline::cmd_ood},
        {"dirichlet-fit", "Dirichlet goodness-of-fit agreement comparison", pipeline::cmd_dirichlet_fit},
        {"bench-eps", "batched vs sequential multi-noise inference timing", pipeline::cmd_bench_eps},
        {"run-all", "every stage from make-data to dirichlet-fit", pipeline::run_all},
    };
    for (const auto& c : commands) app.add_subcommand(c.name, c.help);
    auto* show = app.add_subcommand("show-config", "print the resolved config with defaults filled in");

    CLI11_PARSE(app, argc, argv);

    try {
        ExperimentConfig cfg = config_path.empty() ? ExperimentConfig{} : load_config(config_path);
        if (seed) cfg.seed = *seed;
        if (!out_dir.empty()) cfg.output_dir = out_dir;
        cfg.validate();
        if (show->parsed()) {
            std::cout << config_to_json(cfg).dump(2) << '\n';
            return kOk;
        }
        const pipeline::Context ctx(cfg, quiet);
        for (const auto& c : commands) {
            if (!app.got_subcommand(c.name)) continue;
            const auto result = pipeline::timed(ctx, c.name, c.run);
            if (!quiet && std::string(c.name) != "run-all") std::cout << result.dump(2) << '\n';
        }
        return kOk;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kConfig;
    } catch (const ArtifactError& e) {
        std::cerr << "artifact error: " << e.what() << '\n';
        return kArtifact;
    } catch (const FormatError& e) {
        std::cerr << "format error: " << e.what() << '\n';
        return kArtifact;
    } catch (const NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << '\n';
        return kNumeric;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kFailure;
    }
}
