#pragma once

// Teacher ensemble: cyclical SGHMC over MLP classifiers, ensemble
// prediction, and the k-fold / bagging partitions with held-out (out-of-bag)
// prediction assembly.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fed/data.hpp"
#include "fed/mlp.hpp"
#include "fed/random.hpp"
#include "fed/tensor.hpp"

namespace fed::posterior {

struct SamplerConfig {
    std::size_t cycles = 10;
    std::size_t steps_per_cycle = 400;
    double base_lr = 2e-4;
    /// Leading fraction of each cycle run as noise-free momentum SGD.
    double exploration_fraction = 0.8;
    /// Friction alpha in v <- (1 - alpha) v - lr * grad U + noise.
    double momentum_decay = 0.1;
    double temperature = 1.0;
    std::size_t samples_per_cycle = 2;
    double prior_std = 1.0;
    std::size_t batch_size = 64;
    /// Independent chains, chain c seeded derive_seed(seed, c).
    std::size_t chains = 1;

    void validate() const;
    std::size_t samples_per_chain() const { return cycles * samples_per_cycle; }
    std::size_t total_samples() const { return chains * samples_per_chain(); }
    /// Cosine-annealed step size at step t of a cycle.
    double step_size(std::size_t t_in_cycle) const;
    /// Number of leading noise-free steps per cycle.
    std::size_t exploration_steps() const;
};

/// Potential U(theta) estimate; writes its gradient into `grad` and may draw
/// minibatches from `rng`.
using PotentialFn = std::function<double(std::span<const double> theta, Rng& rng, std::span<double> grad)>;

/// Per-step potential values, recorded when a trace is passed in.
struct SamplerTrace {
    std::vector<double> potential;
};

/// Cyclical SGHMC. Keeps the last `samples_per_cycle` iterates of each cycle.
/// Throws NumericError (with cycle and step) on a non-finite potential or gradient.
std::vector<Tensor> csghmc_run(const Tensor& init, const PotentialFn& potential, const SamplerConfig& cfg, Rng& rng,
                               SamplerTrace* trace = nullptr);

/// Momentum SGD on the same cyclical schedule with no noise at all.
std::vector<Tensor> sgd_momentum_run(const Tensor& init, const PotentialFn& potential, const SamplerConfig& cfg,
                                     Rng& rng, SamplerTrace* trace = nullptr);

/// N * mean minibatch cross-entropy + |theta|^2 / (2 prior_std^2).
PotentialFn classification_potential(const MlpSpec& spec, const data::LabeledDataset& ds, double prior_std,
                                     std::size_t batch_size);

/// Full-data mean cross-entropy of one parameter vector.
double mean_cross_entropy(const MlpSpec& spec, std::span<const double> flat, const data::LabeledDataset& ds);

/// Samples chains * cycles * samples_per_cycle members, chain by chain.
std::vector<ModelParams> csghmc_sample(const data::LabeledDataset& ds, const MlpSpec& spec, const SamplerConfig& cfg,
                                       std::uint64_t seed);

/// Single deterministic network: momentum SGD with the sampler's schedule,
/// returning the final iterate.
ModelParams train_deterministic(const data::LabeledDataset& ds, const MlpSpec& spec, const SamplerConfig& cfg,
                                std::uint64_t seed);

/// Member probabilities [N x M x C].
Tensor predict_ensemble(const std::vector<ModelParams>& members, const Tensor& inputs);
/// Reference loop over members and rows, one forward pass per input row.
Tensor predict_ensemble_serial(const std::vector<ModelParams>& members, const Tensor& inputs);

enum class PartitionKind { kFold, kBagging };

struct PartitionPlan {
    PartitionKind kind = PartitionKind::kFold;
    std::size_t num_points = 0;
    /// Training index list per fold-complement or bag (bags repeat indices).
    std::vector<std::vector<std::size_t>> groups;
    std::size_t members_per_group = 1;
    std::uint64_t seed = 0;

    std::size_t num_members() const { return groups.size() * members_per_group; }
    std::size_t group_of(std::size_t member) const { return member / members_per_group; }
    const std::vector<std::size_t>& train_set(std::size_t member) const { return groups[group_of(member)]; }
};

/// kFold: `groups` folds, group g trains on every fold except g.
/// kBagging: `groups` bags of n draws with replacement.
PartitionPlan make_partition(PartitionKind kind, std::size_t n, std::size_t groups, std::size_t members_per_group,
                             std::uint64_t seed);

/// Runs one chain per group (seeded derive_seed(seed, g)); every chain must
/// produce exactly plan.members_per_group samples.
std::vector<ModelParams> sample_partitioned(const data::LabeledDataset& train, const MlpSpec& spec,
                                            const SamplerConfig& cfg, const PartitionPlan& plan, std::uint64_t seed);

/// Per point, probabilities from only the members that never trained on it.
struct RaggedPredictions {
    std::size_t num_members = 0;
    std::size_t num_classes = 0;
    /// Original index of each kept point.
    std::vector<std::size_t> point_index;
    /// offsets[p]..offsets[p+1] index member_ids / rows of probs for kept point p.
    std::vector<std::size_t> offsets{0};
    std::vector<std::uint32_t> member_ids;
    std::vector<double> probs;
    /// Points dropped because every member trained on them.
    std::vector<std::size_t> excluded;

    std::size_t num_points() const { return point_index.size(); }
    std::size_t count(std::size_t p) const { return offsets[p + 1] - offsets[p]; }
    std::span<const double> row(std::size_t entry) const {
        return std::span<const double>(probs).subspan(entry * num_classes, num_classes);
    }
};

/// `predictions` is [N x M x C] on the full training set the plan indexes.
/// Throws ContractError if every point is excluded.
RaggedPredictions heldout_predictions(const Tensor& predictions, const PartitionPlan& plan);

struct EnsembleStore {
    MlpSpec spec;
    std::vector<ModelParams> members;
    std::string dataset;
    Tensor predictions;  // [N x M x C] on `dataset`
    std::optional<PartitionPlan> plan;
};

}  // namespace fed::posterior
