#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "fed/autodiff.hpp"
#include "fed/errors.hpp"
#include "fed/mmd.hpp"
#include "support.hpp"

using namespace fed;
using namespace fed::mmd;
using fed::testing::random_tensor;

namespace {

// m function reps, each a concatenation of b probability vectors of size c.
Tensor random_reps(std::size_t m, std::size_t b, std::size_t c, Rng& rng) {
    return testing::random_probs(m * b, c, rng).reshaped({m, b * c});
}

std::vector<KernelSpec> kernels() {
    return {KernelSpec::linear(), KernelSpec::rbf(1.0), KernelSpec::rbf(0.4), KernelSpec::rbf_mixture({0.5, 1.0, 2.0})};
}

Tensor permute_rows(const Tensor& t, Rng& rng) {
    const auto order = rng.permutation(t.rows());
    Tensor out(t.shape());
    for (std::size_t i = 0; i < t.rows(); ++i) {
        std::copy(t.row(order[i]).begin(), t.row(order[i]).end(), out.row(i).begin());
    }
    return out;
}

}  // namespace

TEST_CASE("kernel hand values") {
    const std::vector<double> a{0.3, 0.7}, b{0.9, 0.1};
    CHECK(kernel_eval(KernelSpec::rbf(2.0), a, a) == 1.0);
    const std::vector<double> e0{1, 0}, e1{0, 1};
    CHECK(kernel_eval(KernelSpec::linear(), e0, e1) == 0.0);
    // |x - y|^2 = 8 under lengthscales {2, 10}.
    const std::vector<double> x{0, 0}, y{2, 2};
    CHECK(kernel_eval(KernelSpec::rbf_mixture({2, 10}), x, y) ==
          doctest::Approx(std::exp(-1.0) + std::exp(-0.04)).epsilon(1e-15));
    CHECK_THROWS_AS(kernel_eval(KernelSpec::rbf(1.0), a, std::vector<double>{1, 2, 3}), DimensionError);
}

TEST_CASE("kernel spec validation and names") {
    CHECK_THROWS_AS(KernelSpec::rbf(0.0).validate(), ConfigError);
    CHECK_THROWS_AS(KernelSpec::rbf_mixture({}).validate(), ConfigError);
    CHECK_THROWS_AS(KernelSpec::rbf_mixture({1.0, -2.0}).validate(), ConfigError);
    for (const auto& k : kernels()) CHECK(KernelSpec::parse_kind(k.kind_name()) == k.kind);
    CHECK_THROWS_AS(KernelSpec::parse_kind("cosine"), ConfigError);
}

TEST_CASE("batch estimator equals the brute-force double sum") {
    Rng rng(1);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t m = 1 + rng.index(8), c = 2 + rng.index(3);
        const std::size_t b = 1 + rng.index(64 / c);
        const Tensor p = random_reps(m, b, c, rng), q = random_reps(m, b, c, rng);
        for (const auto& k : kernels()) CHECK(std::abs(mmd2_batch(p, q, k) - mmd2_bruteforce(p, q, k)) < 1e-12);
    }
}

TEST_CASE("identities: zero on equal sets, single-element expansion, linear mean difference") {
    Rng rng(2);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t m = 1 + rng.index(8);
        const Tensor p = random_reps(m, 8, 3, rng), q = random_reps(m, 8, 3, rng);
        for (const auto& k : kernels()) CHECK(std::abs(mmd2_batch(p, p, k)) < 1e-12);

        Tensor mean_diff({24});
        for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t d = 0; d < 24; ++d) mean_diff[d] += (p(i, d) - q(i, d)) / static_cast<double>(m);
        }
        double sq = 0.0;
        for (double v : mean_diff.data()) sq += v * v;
        CHECK(std::abs(mmd2_batch(p, q, KernelSpec::linear()) - sq) < 1e-10);
    }
    const Tensor a = random_reps(1, 4, 2, rng), b = random_reps(1, 4, 2, rng);
    const auto k = KernelSpec::rbf(0.7);
    const double expect = kernel_eval(k, a.row(0), a.row(0)) + kernel_eval(k, b.row(0), b.row(0)) -
                          2 * kernel_eval(k, a.row(0), b.row(0));
    CHECK(mmd2_batch(a, b, k) == doctest::Approx(expect).epsilon(1e-14));
    CHECK_THROWS_AS(mmd2_batch(random_reps(2, 4, 2, rng), random_reps(3, 4, 2, rng), k), DimensionError);
}

TEST_CASE("nonnegativity, exact symmetry and permutation invariance") {
    Rng rng(3);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t m = 1 + rng.index(8);
        const Tensor p = random_reps(m, 6, 2, rng), q = random_reps(m, 6, 2, rng);
        for (const auto& k : kernels()) {
            const double v = mmd2_batch(p, q, k);
            CHECK(v >= -1e-12);
            CHECK(v == mmd2_batch(q, p, k));
            CHECK(std::abs(mmd2_batch(permute_rows(p, rng), permute_rows(q, rng), k) - v) < 1e-12);
        }
    }
}

TEST_CASE("far-apart sets stay positive and separation is monotone") {
    const auto k = KernelSpec::rbf(1.0);
    Tensor p({3, 2}, 0.0), q({3, 2}, 0.0);
    for (std::size_t i = 0; i < 3; ++i) q(i, 0) = 100.0;
    // Point masses: 2 - 2 exp(-d^2 / 2) -> 2 = k_self(p) + k_self(q).
    CHECK(mmd2_batch(p, q, k) == doctest::Approx(2.0));
    double prev = -1.0;
    for (double d = 0.0; d <= 3.0; d += 0.05) {
        for (std::size_t i = 0; i < 3; ++i) q(i, 0) = d;
        const double v = mmd2_batch(p, q, k);
        CHECK(v > prev);
        prev = v;
    }
}

TEST_CASE("analytic gradient matches finite differences") {
    Rng rng(4);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t m = 2 + rng.index(6);
        const Tensor p = random_reps(m, 5, 2, rng), q = random_reps(m, 5, 2, rng);
        for (const auto& k : kernels()) {
            const auto build = [&](ad::Graph&, const std::vector<ad::Var>& v) { return mmd2(p, v[0], k); };
            CHECK(testing::gradcheck(build, {q}) < 1e-5);
            ad::Graph g;
            const auto var = g.parameter(q);
            const auto loss = mmd2(p, var, k);
            CHECK(loss.value().item() == mmd2_batch(p, q, k));
            g.backward(loss);
            const Tensor direct = mmd2_grad_q(p, q, k);
            for (std::size_t e = 0; e < direct.size(); ++e) CHECK(g.grad(var)[e] == direct[e]);
        }
    }
}
