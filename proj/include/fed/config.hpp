#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "fed/generator.hpp"
#include "fed/mmd.hpp"
#include "fed/posterior.hpp"

namespace fed {

struct DatasetConfig {
    std::string kind = "two_moons";  // two_moons | blobs | rings
    std::size_t n = 400;
    double noise = 0.25;  // two_moons / rings noise, blobs std
    std::vector<std::vector<double>> centers{{-2.0, 0.0}, {2.0, 0.0}, {0.0, 3.0}};
    std::vector<double> radii{1.0, 2.5};
};

struct PartitionConfig {
    std::string kind = "none";  // none | kfold | bagging
    std::size_t groups = 10;
    std::size_t members_per_group = 2;
};

struct EnsembleConfig {
    std::vector<std::size_t> hidden{32, 32};
    posterior::SamplerConfig sampler;
    PartitionConfig partition;
};

struct MixupConfig {
    double alpha = 0.2;
    /// Auxiliary points per training point.
    double ratio = 2.0;
};

struct GeneratorConfig {
    std::vector<std::size_t> hidden{32, 32};
    /// Unset: one noise dimension per data dimension.
    std::optional<std::size_t> input_noise_dims;
    /// Unset: every hidden layer.
    std::optional<std::vector<std::size_t>> hidden_noise_sites;
    double init_noise_scale = 0.1;
    bool share_hidden_noise = false;
};

struct DistillSection {
    std::string source = "mixup";  // mixup | train | heldout
    gen::DistillConfig train;
};

struct OodConfig {
    std::string shift = "disjoint_blob";  // disjoint_blob | translate | scale_radius
    std::size_t n = 0;
    double std = 0.0;
    std::vector<double> offset;
    /// Blob center; empty places the blob in a random direction beyond the data.
    std::vector<double> center;
    double factor = 4.0;
    /// Unset: 5 x RMS radius of the training inputs.
    std::optional<double> margin;
};

struct MetricsConfig {
    std::size_t ece_bins = 15;
    /// Function draws for generator metrics; 0 means "same as the ensemble size".
    std::size_t n_functions = 0;
    OodConfig ood;
};

struct BenchConfig {
    std::vector<std::size_t> functions{1, 2, 4, 8, 16, 32};
    /// Inputs per call. One input with M noise draws is the per-query case
    /// that batching over functions targets.
    std::size_t batch = 1;
    std::size_t repeats = 200;
};

struct ExperimentConfig {
    std::uint64_t seed = 0;
    std::string output_dir = "run";
    DatasetConfig dataset;
    EnsembleConfig ensemble;
    MixupConfig mixup;
    GeneratorConfig generator;
    DistillSection distill;
    MetricsConfig metrics;
    BenchConfig bench;

    /// Throws ConfigError on any invalid field.
    void validate() const;
    gen::GeneratorSpec generator_spec(std::size_t data_dim, std::size_t classes) const;
    std::size_t num_classes() const;
};

/// Parses and validates; unknown keys at any level are rejected.
ExperimentConfig config_from_json(const nlohmann::json& j);
ExperimentConfig load_config(const std::string& path);
/// Canonical form with every default filled in.
nlohmann::json config_to_json(const ExperimentConfig& cfg);
/// FNV-1a over the canonical dump, output_dir excluded. 16 hex digits.
std::string config_hash(const ExperimentConfig& cfg);

}  // namespace fed
