#pragma once

// Shared helpers for the test binaries: random tensors and a central
// finite-difference gradient checker for graph-built losses.

#include <cmath>
#include <functional>
#include <vector>

#include "fed/autodiff.hpp"
#include "fed/random.hpp"
#include "fed/tensor.hpp"

namespace fed::testing {

inline Tensor random_tensor(Shape shape, Rng& rng, double lo = -2.0, double hi = 2.0) {
    Tensor t(std::move(shape));
    for (double& v : t.data()) v = lo + (hi - lo) * rng.uniform();
    return t;
}

inline Tensor random_probs(std::size_t rows, std::size_t cols, Rng& rng) {
    Tensor t({rows, cols});
    for (std::size_t i = 0; i < rows; ++i) {
        double total = 0.0;
        for (std::size_t k = 0; k < cols; ++k) total += t(i, k) = 0.05 + rng.uniform();
        for (std::size_t k = 0; k < cols; ++k) t(i, k) /= total;
    }
    return t;
}

using LossBuilder = std::function<ad::Var(ad::Graph&, const std::vector<ad::Var>&)>;

/// ||analytic - numeric|| / max(||numeric||, 1e-8), worst over parameters.
inline double gradcheck(const LossBuilder& build, const std::vector<Tensor>& params, double h = 1e-5) {
    std::vector<Tensor> analytic;
    {
        ad::Graph g;
        std::vector<ad::Var> vars;
        for (const auto& p : params) vars.push_back(g.parameter(p));
        g.backward(build(g, vars));
        for (const auto& v : vars) analytic.push_back(g.grad(v));
    }
    const auto eval = [&](const std::vector<Tensor>& ps) {
        ad::Graph g;
        std::vector<ad::Var> vars;
        for (const auto& p : ps) vars.push_back(g.parameter(p));
        return build(g, vars).value().item();
    };
    double worst = 0.0;
    auto work = params;
    for (std::size_t t = 0; t < params.size(); ++t) {
        double diff = 0.0, norm = 0.0;
        for (std::size_t k = 0; k < params[t].size(); ++k) {
            const double x = params[t][k];
            work[t][k] = x + h;
            const double up = eval(work);
            work[t][k] = x - h;
            const double down = eval(work);
            work[t][k] = x;
            const double numeric = (up - down) / (2.0 * h);
            diff += std::pow(analytic[t][k] - numeric, 2);
            norm += numeric * numeric;
        }
        worst = std::max(worst, std::sqrt(diff) / std::max(std::sqrt(norm), 1e-8));
    }
    return worst;
}

}  // namespace fed::testing
