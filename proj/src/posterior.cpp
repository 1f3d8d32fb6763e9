#include "fed/posterior.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "fed/autodiff.hpp"
#include "fed/errors.hpp"

namespace fed::posterior {

void SamplerConfig::validate() const {
    if (cycles == 0 || steps_per_cycle == 0) throw ConfigError("sampler: cycles and steps_per_cycle must be positive");
    if (!(base_lr > 0.0)) throw ConfigError("sampler: base_lr must be positive");
    if (!(exploration_fraction >= 0.0 && exploration_fraction <= 1.0)) {
        throw ConfigError("sampler: exploration_fraction must lie in [0,1]");
    }
    if (!(momentum_decay > 0.0 && momentum_decay <= 1.0)) throw ConfigError("sampler: momentum_decay must lie in (0,1]");
    if (!(temperature >= 0.0)) throw ConfigError("sampler: temperature must be non-negative");
    if (samples_per_cycle == 0 || samples_per_cycle > steps_per_cycle) {
        throw ConfigError("sampler: samples_per_cycle must lie in [1, steps_per_cycle]");
    }
    if (!(prior_std > 0.0)) throw ConfigError("sampler: prior_std must be positive");
    if (batch_size == 0) throw ConfigError("sampler: batch_size must be positive");
    if (chains == 0) throw ConfigError("sampler: chains must be positive");
}

double SamplerConfig::step_size(std::size_t t) const {
    const double phase = std::numbers::pi * static_cast<double>(t) / static_cast<double>(steps_per_cycle);
    return 0.5 * base_lr * (std::cos(phase) + 1.0);
}

std::size_t SamplerConfig::exploration_steps() const {
    return static_cast<std::size_t>(std::floor(exploration_fraction * static_cast<double>(steps_per_cycle)));
}

namespace {

void check_finite(double u, std::span<const double> grad, std::size_t cycle, std::size_t step) {
    bool ok = std::isfinite(u);
    for (double g : grad) ok = ok && std::isfinite(g);
    if (!ok) {
        throw NumericError("sampler diverged at cycle " + std::to_string(cycle) + " step " + std::to_string(step) +
                           " (potential " + std::to_string(u) + ")");
    }
}

}  // namespace

std::vector<Tensor> csghmc_run(const Tensor& init, const PotentialFn& potential, const SamplerConfig& cfg, Rng& rng,
                               SamplerTrace* trace) {
    cfg.validate();
    Tensor theta = init;
    const std::size_t dim = theta.size();
    std::vector<double> velocity(dim, 0.0), grad(dim, 0.0);
    std::vector<Tensor> samples;
    samples.reserve(cfg.samples_per_chain());
    const std::size_t explore = cfg.exploration_steps();
    const double friction = cfg.momentum_decay;
    for (std::size_t c = 0; c < cfg.cycles; ++c) {
        for (std::size_t t = 0; t < cfg.steps_per_cycle; ++t) {
            const double lr = cfg.step_size(t);
            const double u = potential(theta.data(), rng, grad);
            check_finite(u, grad, c, t);
            if (trace) trace->potential.push_back(u);
            for (std::size_t k = 0; k < dim; ++k) velocity[k] = (1.0 - friction) * velocity[k] - lr * grad[k];
            if (t >= explore && cfg.temperature > 0.0) {
                const double noise = std::sqrt(2.0 * lr * friction * cfg.temperature);
                for (std::size_t k = 0; k < dim; ++k) velocity[k] += noise * rng.normal();
            }
            for (std::size_t k = 0; k < dim; ++k) theta[k] += velocity[k];
            if (t + cfg.samples_per_cycle >= cfg.steps_per_cycle) samples.push_back(theta);
        }
    }
    return samples;
}

std::vector<Tensor> sgd_momentum_run(const Tensor& init, const PotentialFn& potential, const SamplerConfig& cfg,
                                     Rng& rng, SamplerTrace* trace) {
    cfg.validate();
    Tensor theta = init;
    std::vector<double> velocity(theta.size(), 0.0), grad(theta.size(), 0.0);
    std::vector<Tensor> snapshots;
    for (std::size_t c = 0; c < cfg.cycles; ++c) {
        for (std::size_t t = 0; t < cfg.steps_per_cycle; ++t) {
            const double lr = cfg.step_size(t);
            const double u = potential(theta.data(), rng, grad);
            check_finite(u, grad, c, t);
            if (trace) trace->potential.push_back(u);
            for (std::size_t k = 0; k < theta.size(); ++k) {
                velocity[k] = (1.0 - cfg.momentum_decay) * velocity[k] - lr * grad[k];
                theta[k] += velocity[k];
            }
            if (t + cfg.samples_per_cycle >= cfg.steps_per_cycle) snapshots.push_back(theta);
        }
    }
    return snapshots;
}

PotentialFn classification_potential(const MlpSpec& spec, const data::LabeledDataset& ds, double prior_std,
                                     std::size_t batch_size) {
    spec.validate(true);
    ds.validate();
    if (ds.dim() != spec.input_dim() || ds.num_classes != spec.num_classes()) {
        throw ConfigError("mlp widths do not match dataset '" + ds.name + "'");
    }
    const ParamLayout layout(spec);
    const std::size_t batch = std::min(batch_size, ds.size());
    const double n = static_cast<double>(ds.size());
    const double prior_precision = 1.0 / (prior_std * prior_std);
    return [layout, batch, n, prior_precision, &ds](std::span<const double> theta, Rng& rng, std::span<double> grad) {
        std::vector<std::size_t> idx(batch);
        if (batch == ds.size()) {
            for (std::size_t i = 0; i < batch; ++i) idx[i] = i;
        } else {
            for (auto& i : idx) i = rng.index(ds.size());
        }
        const auto mb = ds.subset(idx);
        ad::Graph g;
        std::vector<ad::Var> params;
        for (auto& t : layout.unpack(theta)) params.push_back(g.parameter(std::move(t)));
        const ad::Var x = g.constant(mb.inputs);
        const ad::Var loss = ad::cross_entropy(ad::softmax_rows(mlp_logits(params, x)), mb.labels);
        g.backward(loss);
        std::vector<Tensor> grads;
        grads.reserve(params.size());
        for (const auto& p : params) grads.push_back(g.grad(p));
        const Tensor flat_grad = layout.pack(grads);
        double sq = 0.0;
        for (std::size_t k = 0; k < theta.size(); ++k) {
            grad[k] = n * flat_grad[k] + prior_precision * theta[k];
            sq += theta[k] * theta[k];
        }
        return n * loss.value().item() + 0.5 * prior_precision * sq;
    };
}

double mean_cross_entropy(const MlpSpec& spec, std::span<const double> flat, const data::LabeledDataset& ds) {
    const Tensor probs = mlp_probs(spec, flat, ds.inputs);
    double loss = 0.0;
    for (std::size_t i = 0; i < ds.size(); ++i) loss -= std::log(std::max(probs(i, ds.labels[i]), ad::kProbFloor));
    return loss / static_cast<double>(ds.size());
}

std::vector<ModelParams> csghmc_sample(const data::LabeledDataset& ds, const MlpSpec& spec, const SamplerConfig& cfg,
                                       std::uint64_t seed) {
    cfg.validate();
    const auto potential = classification_potential(spec, ds, cfg.prior_std, cfg.batch_size);
    std::vector<std::vector<Tensor>> per_chain(cfg.chains);
    const auto nc = static_cast<std::ptrdiff_t>(cfg.chains);
#pragma omp parallel for schedule(dynamic)
    for (std::ptrdiff_t c = 0; c < nc; ++c) {
        Rng rng(derive_seed(seed, static_cast<std::uint64_t>(c)));
        const Tensor init = init_mlp_params(spec, rng);
        per_chain[c] = csghmc_run(init, potential, cfg, rng);
    }
    std::vector<ModelParams> out;
    for (auto& chain : per_chain) {
        for (auto& theta : chain) out.push_back({spec, std::move(theta)});
    }
    return out;
}

ModelParams train_deterministic(const data::LabeledDataset& ds, const MlpSpec& spec, const SamplerConfig& cfg,
                                std::uint64_t seed) {
    Rng rng(seed);
    const Tensor init = init_mlp_params(spec, rng);
    const auto potential = classification_potential(spec, ds, cfg.prior_std, cfg.batch_size);
    auto snaps = sgd_momentum_run(init, potential, cfg, rng);
    return {spec, std::move(snaps.back())};
}

Tensor predict_ensemble(const std::vector<ModelParams>& members, const Tensor& inputs) {
    if (members.empty()) throw ContractError("predict_ensemble: no members");
    const std::size_t n = inputs.rows(), m = members.size(), c = members.front().spec.num_classes();
    for (const auto& mem : members) {
        if (mem.spec.input_dim() != inputs.cols() || mem.spec.num_classes() != c) {
            throw DimensionError("predict_ensemble: member widths do not match inputs");
        }
    }
    Tensor out({n, m, c});
    const auto mm = static_cast<std::ptrdiff_t>(m);
#pragma omp parallel for schedule(dynamic)
    for (std::ptrdiff_t j = 0; j < mm; ++j) {
        const Tensor probs = mlp_probs(members[j].spec, members[j].flat.data(), inputs);
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t k = 0; k < c; ++k) out(i, j, k) = probs(i, k);
        }
    }
    return out;
}

Tensor predict_ensemble_serial(const std::vector<ModelParams>& members, const Tensor& inputs) {
    if (members.empty()) throw ContractError("predict_ensemble: no members");
    const std::size_t n = inputs.rows(), m = members.size(), c = members.front().spec.num_classes();
    Tensor out({n, m, c});
    for (std::size_t i = 0; i < n; ++i) {
        const Tensor x({1, inputs.cols()}, std::vector<double>(inputs.row(i).begin(), inputs.row(i).end()));
        for (std::size_t j = 0; j < m; ++j) {
            const Tensor probs = mlp_probs(members[j].spec, members[j].flat.data(), x);
            for (std::size_t k = 0; k < c; ++k) out(i, j, k) = probs(0, k);
        }
    }
    return out;
}

PartitionPlan make_partition(PartitionKind kind, std::size_t n, std::size_t groups, std::size_t members_per_group,
                             std::uint64_t seed) {
    if (members_per_group == 0) throw ContractError("partition: members_per_group must be positive");
    PartitionPlan plan;
    plan.kind = kind;
    plan.num_points = n;
    plan.members_per_group = members_per_group;
    plan.seed = seed;
    Rng rng(seed);
    if (kind == PartitionKind::kFold) {
        if (groups < 2) throw ContractError("k-fold needs K >= 2");
        if (n < groups) {
            throw ContractError("k-fold: " + std::to_string(n) + " points cannot fill " + std::to_string(groups) +
                                " folds");
        }
        const auto order = rng.permutation(n);
        std::vector<std::size_t> fold_of(n);
        for (std::size_t r = 0; r < n; ++r) fold_of[order[r]] = r * groups / n;
        plan.groups.resize(groups);
        for (std::size_t g = 0; g < groups; ++g) {
            for (std::size_t i = 0; i < n; ++i) {
                if (fold_of[i] != g) plan.groups[g].push_back(i);
            }
        }
    } else {
        if (groups < 1) throw ContractError("bagging needs at least one bag");
        if (n == 0) throw ContractError("bagging: empty dataset");
        plan.groups.resize(groups);
        for (auto& bag : plan.groups) {
            bag.resize(n);
            for (auto& i : bag) i = rng.index(n);
        }
    }
    return plan;
}

std::vector<ModelParams> sample_partitioned(const data::LabeledDataset& train, const MlpSpec& spec,
                                            const SamplerConfig& cfg, const PartitionPlan& plan, std::uint64_t seed) {
    if (cfg.total_samples() != plan.members_per_group) {
        throw ConfigError("sampler yields " + std::to_string(cfg.total_samples()) + " samples per chain but the plan " +
                          "needs " + std::to_string(plan.members_per_group) + " members per group");
    }
    if (plan.num_points != train.size()) throw ConfigError("partition plan does not match the training set size");
    const std::size_t groups = plan.groups.size();
    std::vector<std::vector<ModelParams>> per_group(groups);
    const auto gg = static_cast<std::ptrdiff_t>(groups);
#pragma omp parallel for schedule(dynamic)
    for (std::ptrdiff_t g = 0; g < gg; ++g) {
        const auto subset = train.subset(plan.groups[g]);
        per_group[g] = csghmc_sample(subset, spec, cfg, derive_seed(seed, static_cast<std::uint64_t>(g)));
    }
    std::vector<ModelParams> out;
    for (auto& chain : per_group) {
        for (auto& m : chain) out.push_back(std::move(m));
    }
    return out;
}

RaggedPredictions heldout_predictions(const Tensor& predictions, const PartitionPlan& plan) {
    if (predictions.rank() != 3) throw DimensionError("heldout: predictions must be [N x M x C]");
    const std::size_t n = predictions.dim(0), m = predictions.dim(1), c = predictions.dim(2);
    if (n != plan.num_points || m != plan.num_members()) {
        throw DimensionError("heldout: predictions " + shape_string(predictions.shape()) +
                             " do not match the partition plan");
    }
    std::vector<std::vector<char>> in_group(plan.groups.size(), std::vector<char>(n, 0));
    for (std::size_t g = 0; g < plan.groups.size(); ++g) {
        for (std::size_t i : plan.groups[g]) in_group[g][i] = 1;
    }
    RaggedPredictions out;
    out.num_members = m;
    out.num_classes = c;
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t before = out.member_ids.size();
        for (std::size_t j = 0; j < m; ++j) {
            if (in_group[plan.group_of(j)][i]) continue;
            out.member_ids.push_back(static_cast<std::uint32_t>(j));
            for (std::size_t k = 0; k < c; ++k) out.probs.push_back(predictions(i, j, k));
        }
        if (out.member_ids.size() == before) {
            out.excluded.push_back(i);
            continue;
        }
        out.point_index.push_back(i);
        out.offsets.push_back(out.member_ids.size());
    }
    if (out.point_index.empty()) throw ContractError("heldout: every point was seen by every member");
    return out;
}

}  // namespace fed::posterior
