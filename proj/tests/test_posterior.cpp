#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "fed/data.hpp"
#include "fed/errors.hpp"
#include "fed/metrics.hpp"
#include "fed/posterior.hpp"
#include "support.hpp"

using namespace fed;
using namespace fed::posterior;

namespace {

data::LabeledDataset separable_blobs(std::uint64_t seed) {
    return data::make_blobs(60, {{-3, 0}, {3, 0}}, 0.5, seed);
}

MlpSpec small_spec() { return MlpSpec{{2, 8, 2}}; }

}  // namespace

TEST_CASE("sampler bookkeeping") {
    SamplerConfig cfg;
    cfg.steps_per_cycle = 20;
    const auto members = csghmc_sample(separable_blobs(1), small_spec(), cfg, 3);
    CHECK(members.size() == 20);
    cfg.chains = 3;
    CHECK(csghmc_sample(separable_blobs(1), small_spec(), cfg, 3).size() == 60);
    cfg.cycles = 0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("step size follows the cosine schedule") {
    SamplerConfig cfg;
    cfg.base_lr = 0.2;
    cfg.steps_per_cycle = 10;
    CHECK(cfg.step_size(0) == doctest::Approx(0.2));
    CHECK(cfg.step_size(5) == doctest::Approx(0.1));
    CHECK(cfg.exploration_steps() == 8);
}

TEST_CASE("zero temperature with full exploration is exactly momentum SGD") {
    const auto ds = separable_blobs(2);
    SamplerConfig cfg;
    cfg.temperature = 0.0;
    cfg.exploration_fraction = 1.0;
    cfg.steps_per_cycle = 50;
    cfg.cycles = 3;
    cfg.batch_size = 16;
    const auto spec = small_spec();
    const auto potential = classification_potential(spec, ds, cfg.prior_std, cfg.batch_size);
    Rng init_rng(5);
    const Tensor init = init_mlp_params(spec, init_rng);
    Rng r1(9), r2(9);
    const auto a = csghmc_run(init, potential, cfg, r1);
    const auto b = sgd_momentum_run(init, potential, cfg, r2);
    REQUIRE(a.size() == b.size());
    for (std::size_t k = 0; k < a.size(); ++k) CHECK(a[k] == b[k]);
}

TEST_CASE("momentum SGD drives the loss on separable blobs below 0.05") {
    const auto ds = separable_blobs(3);
    SamplerConfig cfg;
    cfg.temperature = 0.0;
    cfg.exploration_fraction = 1.0;
    cfg.cycles = 1;
    cfg.steps_per_cycle = 400;
    cfg.samples_per_cycle = 1;
    cfg.base_lr = 1e-3;
    cfg.batch_size = ds.size();  // full batch: the loss sequence is deterministic
    const auto spec = small_spec();
    const auto model = train_deterministic(ds, spec, cfg, 4);
    CHECK(mean_cross_entropy(spec, model.flat.data(), ds) < 0.05);

    // Loss at the end of every 25-step cycle; momentum can wobble between
    // single steps, so strict decrease is checked at this granularity.
    std::vector<double> losses;
    SamplerConfig flat = cfg;
    flat.cycles = 16;
    flat.steps_per_cycle = 25;
    flat.samples_per_cycle = 1;
    const auto potential = classification_potential(spec, ds, cfg.prior_std, cfg.batch_size);
    Rng rng(4);
    const Tensor init = init_mlp_params(spec, rng);
    for (const auto& snap : sgd_momentum_run(init, potential, flat, rng)) {
        losses.push_back(mean_cross_entropy(spec, snap.data(), ds));
    }
    for (std::size_t k = 1; k < losses.size(); ++k) {
        if (losses[k - 1] < 0.05) break;
        CHECK(losses[k] < losses[k - 1]);
    }
    CHECK(losses.back() < 0.05);
}

TEST_CASE("cSGHMC recovers a conjugate Gaussian posterior") {
    // y = X w + N(0, s^2), w ~ N(0, t^2 I): posterior precision
    // A = X^T X / s^2 + I / t^2, mean A^-1 X^T y / s^2.
    Rng rng(11);
    const std::size_t n = 40;
    const double s2 = 1.0, t2 = 1.0;
    Tensor x({n, 2});
    std::vector<double> y(n);
    for (std::size_t i = 0; i < n; ++i) {
        x(i, 0) = rng.normal();
        x(i, 1) = 0.5 * x(i, 0) + rng.normal();
        y[i] = 0.7 * x(i, 0) - 0.4 * x(i, 1) + rng.normal();
    }
    double a00 = 1 / t2, a01 = 0, a11 = 1 / t2, b0 = 0, b1 = 0;
    for (std::size_t i = 0; i < n; ++i) {
        a00 += x(i, 0) * x(i, 0) / s2;
        a01 += x(i, 0) * x(i, 1) / s2;
        a11 += x(i, 1) * x(i, 1) / s2;
        b0 += x(i, 0) * y[i] / s2;
        b1 += x(i, 1) * y[i] / s2;
    }
    const double det = a00 * a11 - a01 * a01;
    const double c00 = a11 / det, c01 = -a01 / det, c11 = a00 / det;
    const double m0 = c00 * b0 + c01 * b1, m1 = c01 * b0 + c11 * b1;

    const PotentialFn potential = [&](std::span<const double> w, Rng&, std::span<double> grad) {
        double u = (w[0] * w[0] + w[1] * w[1]) / (2 * t2);
        grad[0] = w[0] / t2;
        grad[1] = w[1] / t2;
        for (std::size_t i = 0; i < n; ++i) {
            const double r = x(i, 0) * w[0] + x(i, 1) * w[1] - y[i];
            u += r * r / (2 * s2);
            grad[0] += r * x(i, 0) / s2;
            grad[1] += r * x(i, 1) / s2;
        }
        return u;
    };
    SamplerConfig cfg;
    cfg.cycles = 1000;
    cfg.steps_per_cycle = 200;
    cfg.samples_per_cycle = 2;
    cfg.exploration_fraction = 0.5;
    cfg.base_lr = 4e-3;
    // With friction 0.1 the shrinking cosine step heats the momentum faster
    // than friction removes it near the end of a cycle, inflating the
    // covariance by about 50%; 0.5 relaxes quickly enough.
    cfg.momentum_decay = 0.5;
    Rng srng(12);
    const auto samples = csghmc_run(Tensor({2}), potential, cfg, srng);
    REQUIRE(samples.size() == 2000);
    double e0 = 0, e1 = 0;
    for (const auto& w : samples) {
        e0 += w[0] / 2000.0;
        e1 += w[1] / 2000.0;
    }
    double s00 = 0, s01 = 0, s11 = 0;
    for (const auto& w : samples) {
        s00 += (w[0] - e0) * (w[0] - e0) / 1999.0;
        s01 += (w[0] - e0) * (w[1] - e1) / 1999.0;
        s11 += (w[1] - e1) * (w[1] - e1) / 1999.0;
    }
    const double mean_err = std::hypot(e0 - m0, e1 - m1) / std::hypot(m0, m1);
    const double cov_err = std::sqrt(std::pow(s00 - c00, 2) + 2 * std::pow(s01 - c01, 2) + std::pow(s11 - c11, 2)) /
                           std::sqrt(c00 * c00 + 2 * c01 * c01 + c11 * c11);
    CHECK(mean_err < 0.15);
    CHECK(cov_err < 0.15);
}

TEST_CASE("non-finite potentials abort with location") {
    SamplerConfig cfg;
    cfg.steps_per_cycle = 10;
    const PotentialFn bad = [](std::span<const double>, Rng&, std::span<double> grad) {
        grad[0] = std::nan("");
        return 0.0;
    };
    Rng rng(1);
    try {
        csghmc_run(Tensor({1}), bad, cfg, rng);
        FAIL("expected NumericError");
    } catch (const NumericError& e) {
        CHECK(std::string(e.what()).find("cycle 0") != std::string::npos);
    }
}

TEST_CASE("ensemble predictions") {
    const auto ds = separable_blobs(5);
    const auto spec = small_spec();
    Rng rng(6);
    const ModelParams a{spec, init_mlp_params(spec, rng)}, b{spec, init_mlp_params(spec, rng)};

    const Tensor single = predict_ensemble({a}, ds.inputs);
    const Tensor direct = mlp_probs(spec, a.flat.data(), ds.inputs);
    for (std::size_t i = 0; i < ds.size(); ++i) {
        for (std::size_t c = 0; c < 2; ++c) CHECK(single(i, 0, c) == direct(i, c));
    }
    const Tensor dup = predict_ensemble({a, b, a}, ds.inputs);
    for (std::size_t i = 0; i < ds.size(); ++i) {
        for (std::size_t c = 0; c < 2; ++c) CHECK(dup(i, 0, c) == dup(i, 2, c));
    }
    CHECK(predict_ensemble({a, b, a}, ds.inputs) == predict_ensemble_serial({a, b, a}, ds.inputs));

    // Mean-then-argmax against an explicit per-member loop on 20 points.
    const auto mean = metrics::mean_prediction(dup);
    for (std::size_t i = 0; i < 20; ++i) {
        double avg[2] = {0, 0};
        for (const auto* m : {&a, &b, &a}) {
            const Tensor row = mlp_probs(spec, m->flat.data(), ds.inputs.reshaped({ds.size(), 2}));
            for (std::size_t c = 0; c < 2; ++c) avg[c] += row(i, c) / 3.0;
        }
        for (std::size_t c = 0; c < 2; ++c) CHECK(mean(i, c) == doctest::Approx(avg[c]).epsilon(1e-14));
        CHECK(metrics::argmax(mean.row(i)) == (avg[1] > avg[0] ? 1u : 0u));
    }
    for (std::size_t k = 0; k < dup.size(); k += 2) CHECK(std::abs(dup[k] + dup[k + 1] - 1.0) < 1e-9);
}

TEST_CASE("k-fold partitions") {
    const auto plan = make_partition(PartitionKind::kFold, 100, 10, 3, 1);
    CHECK(plan.num_members() == 30);
    std::vector<std::size_t> excluded_by(100, 0);
    for (std::size_t g = 0; g < 10; ++g) {
        CHECK(plan.groups[g].size() == 90);
        std::set<std::size_t> in(plan.groups[g].begin(), plan.groups[g].end());
        CHECK(in.size() == 90);
        for (std::size_t i = 0; i < 100; ++i) excluded_by[i] += in.count(i) ? 0 : 1;
    }
    for (auto e : excluded_by) CHECK(e == 1);
    CHECK(make_partition(PartitionKind::kFold, 100, 10, 3, 1).groups == plan.groups);
    CHECK_THROWS(make_partition(PartitionKind::kFold, 5, 10, 1, 1));
}

TEST_CASE("bagging partitions cover about 1 - 1/e of the data") {
    const auto plan = make_partition(PartitionKind::kBagging, 1000, 20, 1, 2);
    double mean = 0.0;
    for (const auto& bag : plan.groups) {
        CHECK(bag.size() == 1000);
        const double distinct = static_cast<double>(std::set<std::size_t>(bag.begin(), bag.end()).size()) / 1000.0;
        // One bag's fraction has standard deviation about 0.01.
        CHECK(std::abs(distinct - (1.0 - std::exp(-1.0))) < 0.04);
        mean += distinct / 20.0;
    }
    CHECK(std::abs(mean - (1.0 - std::exp(-1.0))) < 0.02);
}

TEST_CASE("held-out predictions") {
    Rng rng(3);
    const std::size_t n = 50;
    {
        const auto plan = make_partition(PartitionKind::kFold, n, 5, 2, 4);
        Tensor pred({n, plan.num_members(), 2});
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < plan.num_members(); ++j) {
                pred(i, j, 0) = rng.uniform();
                pred(i, j, 1) = 1 - pred(i, j, 0);
            }
        const auto h = heldout_predictions(pred, plan);
        CHECK(h.num_points() == n);
        for (std::size_t p = 0; p < n; ++p) {
            CHECK(h.count(p) == 2);
            for (std::size_t e = h.offsets[p]; e < h.offsets[p + 1]; ++e) {
                const auto j = h.member_ids[e];
                const auto& ts = plan.train_set(j);
                CHECK(std::find(ts.begin(), ts.end(), h.point_index[p]) == ts.end());
                CHECK(h.row(e)[0] == pred(h.point_index[p], j, 0));
            }
        }
    }
    {
        const std::size_t big = 400;
        const auto plan = make_partition(PartitionKind::kBagging, big, 120, 1, 5);
        const auto h = heldout_predictions(Tensor({big, 120, 2}, 0.5), plan);
        double mean = 0.0;
        for (std::size_t p = 0; p < h.num_points(); ++p) mean += static_cast<double>(h.count(p));
        mean /= static_cast<double>(h.num_points());
        CHECK(std::abs(mean - 120 * std::exp(-1.0)) < 0.1 * 120 * std::exp(-1.0));
    }
    {
        PartitionPlan plan;
        plan.kind = PartitionKind::kBagging;
        plan.num_points = 3;
        plan.groups = {{0, 1, 2}, {0, 0, 1}};
        const auto h = heldout_predictions(Tensor({3, 2, 2}, 0.5), plan);
        CHECK(h.excluded == std::vector<std::size_t>{0, 1});
        CHECK(h.num_points() == 1);
        plan.groups = {{0, 1, 2}, {2, 1, 0}};
        CHECK_THROWS_AS(heldout_predictions(Tensor({3, 2, 2}, 0.5), plan), ContractError);
    }
}
