#pragma once

// Pipeline commands. Each reads its upstream artifacts from the run
// directory, writes its outputs atomically, and returns a short JSON summary.
// Outputs depend only on (config, seed, upstream files); wall-clock timings
// go to timings.json next to the reports, never into them.

#include <filesystem>
#include <functional>
#include <string>

#include <json.hpp>

#include "fed/config.hpp"

namespace fed::pipeline {

struct Context {
    ExperimentConfig cfg;
    std::filesystem::path out;
    bool quiet = false;

    explicit Context(ExperimentConfig config, bool quiet_ = false);
    std::filesystem::path path(const std::string& relative) const { return out / relative; }
    void log(const std::string& message) const;
};

/// Seed streams derived from the root seed.
enum class Stream : std::uint64_t {
    kDataset = 1,
    kSplit,
    kEnsemble,
    kGenerator,
    kMixup,
    kOod,
    kEvalFunctions,
    kDirichlet,
    kBaseline,
    kBench,
};
std::uint64_t stream_seed(const ExperimentConfig& cfg, Stream s);

nlohmann::json cmd_make_data(const Context& ctx);
nlohmann::json cmd_train_ensemble(const Context& ctx);
nlohmann::json cmd_make_mixup(const Context& ctx);
nlohmann::json cmd_distill(const Context& ctx);
nlohmann::json cmd_evaluate(const Context& ctx);
nlohmann::json cmd_ood(const Context& ctx);
nlohmann::json cmd_dirichlet_fit(const Context& ctx);
nlohmann::json cmd_bench_eps(const Context& ctx);
/// Every command above in order.
nlohmann::json run_all(const Context& ctx);

/// Runs `command` and records its wall time under `name` in timings.json.
nlohmann::json timed(const Context& ctx, const std::string& name,
                     const std::function<nlohmann::json(const Context&)>& command);

std::string git_describe();

}  // namespace fed::pipeline
