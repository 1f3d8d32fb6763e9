#include <doctest.h>

#include <cmath>

#include "fed/autodiff.hpp"
#include "fed/errors.hpp"
#include "support.hpp"

using namespace fed;
using fed::testing::gradcheck;
using fed::testing::random_tensor;

namespace {

// Weighted sum so every output entry gets a distinct upstream gradient.
ad::Var weighted_sum(ad::Graph& g, ad::Var v, Rng& rng) {
    return ad::sum(ad::mul(v, g.constant(random_tensor(v.shape(), rng))));
}

}  // namespace

TEST_CASE("matmul hand cases") {
    ad::Graph g;
    const auto x = g.constant(Tensor::matrix({{3, 1}, {4, 1}}));
    const auto id = g.constant(Tensor::matrix({{1, 0}, {0, 1}}));
    CHECK(ad::matmul(id, x).value() == x.value());
    const auto r = ad::matmul(g.constant(Tensor::matrix({{1, 2}})), g.constant(Tensor::matrix({{3}, {4}})));
    CHECK(r.value()(0, 0) == 11);
    CHECK_THROWS_AS(ad::matmul(x, g.constant(Tensor::matrix({{1, 2, 3}}))), DimensionError);
}

TEST_CASE("elementwise basics") {
    ad::Graph g;
    const auto v = g.constant(Tensor::vector({-1, 2}));
    CHECK(ad::relu(v).value() == Tensor::vector({0, 2}));
    CHECK(ad::add(v, g.constant(Tensor::scalar(0.0))).value() == v.value());
    CHECK_THROWS_AS(ad::log(g.constant(Tensor::vector({1.0, 0.0}))), DomainError);
    CHECK_THROWS_AS(ad::log(g.constant(Tensor::vector({-1.0}))), DomainError);
    CHECK_THROWS_AS(ad::add(v, g.constant(Tensor::vector({1, 2, 3}))), DimensionError);

    Rng rng(1);
    const Tensor pos = random_tensor({50}, rng, 0.01, 5.0);
    const auto round = ad::log(ad::exp(g.constant(pos)));
    double worst = 0.0;
    for (std::size_t k = 0; k < pos.size(); ++k) worst = std::max(worst, std::abs(round.value()[k] - pos[k]));
    CHECK(worst < 1e-12);
}

TEST_CASE("softmax rows are normalized, stable and shift invariant") {
    ad::Graph g;
    const auto u = ad::softmax_rows(g.constant(Tensor::matrix({{0, 0, 0}})));
    for (int k = 0; k < 3; ++k) CHECK(u.value()(0, k) == doctest::Approx(1.0 / 3).epsilon(1e-15));
    const auto big = ad::softmax_rows(g.constant(Tensor::matrix({{1000, 0}})));
    CHECK(std::abs(big.value()(0, 0) - 1.0) < 1e-12);
    CHECK(big.value()(0, 1) < 1e-12);

    Rng rng(2);
    for (int trial = 0; trial < 20; ++trial) {
        Tensor logits = random_tensor({4, 5}, rng, -5, 5);
        const auto p = ad::softmax_rows(g.constant(logits)).value();
        Tensor shifted = logits;
        for (std::size_t k = 0; k < 5; ++k) shifted(2, k) += 7.25;
        const auto q = ad::softmax_rows(g.constant(shifted)).value();
        for (std::size_t i = 0; i < 4; ++i) {
            double total = 0.0;
            for (std::size_t k = 0; k < 5; ++k) {
                total += p(i, k);
                CHECK(std::abs(p(i, k) - q(i, k)) < 1e-12);
            }
            CHECK(std::abs(total - 1.0) < 1e-12);
        }
    }
}

TEST_CASE("cross-entropy hand values and clamping") {
    ad::Graph g;
    const std::vector<std::size_t> y0{0};
    CHECK(ad::cross_entropy(g.constant(Tensor::matrix({{1, 0}})), y0).value().item() == 0.0);
    const std::vector<std::size_t> y3{3, 1};
    const auto uni = g.constant(Tensor({2, 4}, 0.25));
    CHECK(ad::cross_entropy(uni, y3).value().item() == doctest::Approx(std::log(4.0)).epsilon(1e-14));
    const auto soft = ad::cross_entropy(g.constant(Tensor::matrix({{0.8, 0.2}})), Tensor::matrix({{0.5, 0.5}}));
    CHECK(soft.value().item() == doctest::Approx(-(0.5 * std::log(0.8) + 0.5 * std::log(0.2))).epsilon(1e-14));

    ad::Graph h;
    const std::vector<std::size_t> y1{1};
    const auto clamped = ad::cross_entropy(h.constant(Tensor::matrix({{1, 0}})), y1);
    CHECK(clamped.value().item() == doctest::Approx(-std::log(ad::kProbFloor)));
    CHECK(h.clamp_count() == 1);
}

TEST_CASE("backward contract and analytic gradients") {
    ad::Graph g;
    const auto x = g.parameter(Tensor::vector({1, -2, 3}));
    const auto unused = g.parameter(Tensor::vector({5, 5}));
    CHECK_THROWS_AS(g.backward(x), ContractError);
    g.backward(ad::sum(x));
    CHECK(g.grad(x) == Tensor::vector({1, 1, 1}));
    CHECK(g.grad(unused) == Tensor::vector({0, 0}));

    ad::Graph h;
    const auto v = h.parameter(Tensor::vector({1, -2, 3}));
    h.backward(ad::sum(ad::mul(v, v)));
    CHECK(h.grad(v) == Tensor::vector({2, -4, 6}));
}

TEST_CASE("every primitive matches central differences on random instances") {
    Rng rng(7);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t m = 1 + rng.index(4), k = 1 + rng.index(4), n = 1 + rng.index(4);
        const auto weights = [&](ad::Graph& g, ad::Var v) {
            Rng local(100 + trial);
            return weighted_sum(g, v, local);
        };

        CHECK(gradcheck([&](ad::Graph& g, const auto& p) { return weights(g, ad::matmul(p[0], p[1])); },
                        {random_tensor({m, k}, rng), random_tensor({k, n}, rng)}) < 1e-6);
        const Tensor a = random_tensor({m, n}, rng), b = random_tensor({m, n}, rng);
        CHECK(gradcheck([&](ad::Graph& g, const auto& p) { return weights(g, ad::add(p[0], p[1])); }, {a, b}) < 1e-4);
        CHECK(gradcheck([&](ad::Graph& g, const auto& p) { return weights(g, ad::sub(p[0], p[1])); }, {a, b}) < 1e-4);
        CHECK(gradcheck([&](ad::Graph& g, const auto& p) { return weights(g, ad::mul(p[0], p[1])); }, {a, b}) < 1e-4);
        CHECK(gradcheck([&](ad::Graph& g, const auto& p) { return weights(g, ad::mul(p[0], p[1])); },
                        {a, random_tensor({}, rng)}) < 1e-4);
        CHECK(gradcheck([&](ad::Graph& g, const auto& p) { return weights(g, ad::scale(p[0], -1.7)); }, {a}) < 1e-4);
        CHECK(gradcheck([&](ad::Graph& g, const auto& p) { return weights(g, ad::exp(p[0])); }, {a}) < 1e-4);
        CHECK(gradcheck([&](ad::Graph& g, const auto& p) { return weights(g, ad::log(p[0])); },
                        {random_tensor({m, n}, rng, 0.2, 2.0)}) < 1e-4);
        // Keep relu inputs away from the kink, where differences are not meaningful.
        Tensor r = a;
        for (double& v : r.data()) v += v >= 0 ? 0.1 : -0.1;
        CHECK(gradcheck([&](ad::Graph& g, const auto& p) { return weights(g, ad::relu(p[0])); }, {r}) < 1e-4);
        CHECK(gradcheck([&](ad::Graph& g, const auto& p) { return weights(g, ad::add_bias(p[0], p[1])); },
                        {a, random_tensor({n}, rng)}) < 1e-4);
        CHECK(gradcheck([&](ad::Graph& g, const auto& p) { return ad::mean(ad::mul(p[0], p[0])); }, {a}) < 1e-4);
        CHECK(gradcheck([&](ad::Graph&, const auto& p) { return ad::sum(ad::reshape(ad::exp(p[0]), {m * n})); }, {a}) <
              1e-4);
        CHECK(gradcheck([&](ad::Graph& g, const auto& p) { return weights(g, ad::softmax_rows(p[0])); }, {a}) < 1e-5);

        std::vector<std::size_t> labels(m);
        for (auto& y : labels) y = rng.index(n);
        CHECK(gradcheck([&](ad::Graph&, const auto& p) { return ad::cross_entropy(ad::softmax_rows(p[0]), labels); },
                        {a}) < 1e-4);
        const Tensor soft = testing::random_probs(m, n, rng);
        CHECK(gradcheck([&](ad::Graph&, const auto& p) { return ad::cross_entropy(ad::softmax_rows(p[0]), soft); },
                        {a}) < 1e-4);
    }
}
