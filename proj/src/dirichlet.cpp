#include "fed/dirichlet.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "fed/errors.hpp"
#include "fed/metrics.hpp"
#include "fed/random.hpp"

namespace fed::metrics {

double digamma(double x) {
    if (!(x > 0.0)) throw DomainError("digamma needs a positive argument");
    double result = 0.0;
    while (x < 10.0) {
        result -= 1.0 / x;
        x += 1.0;
    }
    const double inv = 1.0 / x, inv2 = inv * inv;
    result += std::log(x) - 0.5 * inv -
              inv2 * (1.0 / 12.0 - inv2 * (1.0 / 120.0 - inv2 * (1.0 / 252.0 - inv2 * (1.0 / 240.0 - inv2 / 132.0))));
    return result;
}

double trigamma(double x) {
    if (!(x > 0.0)) throw DomainError("trigamma needs a positive argument");
    double result = 0.0;
    while (x < 10.0) {
        result += 1.0 / (x * x);
        x += 1.0;
    }
    const double inv = 1.0 / x, inv2 = inv * inv;
    result += inv + 0.5 * inv2 +
              inv * inv2 * (1.0 / 6.0 - inv2 * (1.0 / 30.0 - inv2 * (1.0 / 42.0 - inv2 / 30.0)));
    return result;
}

double inverse_digamma(double y) {
    constexpr double kPsiOne = -0.5772156649015329;
    double x = y >= -2.22 ? std::exp(y) + 0.5 : -1.0 / (y - kPsiOne);
    for (int it = 0; it < 50; ++it) {
        const double step = (digamma(x) - y) / trigamma(x);
        double next = x - step;
        if (next <= 0.0) next = 0.5 * x;
        if (std::abs(next - x) <= 1e-15 * x) {
            x = next;
            break;
        }
        x = next;
    }
    return x;
}

double dirichlet_log_likelihood(const std::vector<double>& alpha, const std::vector<double>& mean_log_p,
                                std::size_t m) {
    double total = 0.0, ll = 0.0;
    for (std::size_t k = 0; k < alpha.size(); ++k) {
        total += alpha[k];
        ll += -std::lgamma(alpha[k]) + (alpha[k] - 1.0) * mean_log_p[k];
    }
    return static_cast<double>(m) * (ll + std::lgamma(total));
}

DirichletFit dirichlet_mle(const Tensor& samples, const DirichletOptions& options) {
    if (samples.rank() != 2 || samples.rows() < 2) throw ContractError("dirichlet_mle needs at least two samples");
    const std::size_t m = samples.rows(), c = samples.cols();
    std::vector<double> mean(c, 0.0), sq(c, 0.0), mean_log(c, 0.0);
    std::vector<double> p(c);
    for (std::size_t i = 0; i < m; ++i) {
        double total = 0.0;
        for (std::size_t k = 0; k < c; ++k) {
            p[k] = std::clamp(samples(i, k), 1e-10, 1.0);
            total += p[k];
        }
        for (std::size_t k = 0; k < c; ++k) {
            p[k] /= total;
            mean[k] += p[k];
            sq[k] += p[k] * p[k];
            mean_log[k] += std::log(p[k]);
        }
    }
    const double md = static_cast<double>(m);
    for (std::size_t k = 0; k < c; ++k) {
        mean[k] /= md;
        sq[k] /= md;
        mean_log[k] /= md;
    }

    // Moment match: Var p_k = m_k (1 - m_k) / (s + 1), averaged over classes.
    double precision_sum = 0.0;
    std::size_t precision_terms = 0;
    for (std::size_t k = 0; k < c; ++k) {
        const double var = sq[k] - mean[k] * mean[k];
        if (var > 0.0) {
            precision_sum += mean[k] * (1.0 - mean[k]) / var - 1.0;
            ++precision_terms;
        }
    }
    double precision = precision_terms ? precision_sum / static_cast<double>(precision_terms) : INFINITY;
    if (!(precision > 0.0)) precision = 1.0;

    DirichletFit fit;
    fit.alpha.resize(c);
    const double max_mean = *std::max_element(mean.begin(), mean.end());
    if (precision * max_mean >= kAlphaCap) {
        for (std::size_t k = 0; k < c; ++k) fit.alpha[k] = kAlphaCap * mean[k] / max_mean;
        fit.capped = true;
        fit.log_likelihood.push_back(dirichlet_log_likelihood(fit.alpha, mean_log, m));
        return fit;
    }
    for (std::size_t k = 0; k < c; ++k) fit.alpha[k] = precision * mean[k];
    fit.log_likelihood.push_back(dirichlet_log_likelihood(fit.alpha, mean_log, m));

    std::vector<double> next(c);
    for (fit.iterations = 1; fit.iterations <= options.max_iterations; ++fit.iterations) {
        double total = 0.0;
        for (double a : fit.alpha) total += a;
        const double psi_total = digamma(total);
        double change = 0.0;
        bool hit_cap = false;
        for (std::size_t k = 0; k < c; ++k) {
            next[k] = inverse_digamma(psi_total + mean_log[k]);
            if (next[k] >= kAlphaCap) hit_cap = true;
            change = std::max(change, std::abs(next[k] - fit.alpha[k]) / fit.alpha[k]);
        }
        if (hit_cap) {
            const double top = *std::max_element(next.begin(), next.end());
            for (std::size_t k = 0; k < c; ++k) fit.alpha[k] = kAlphaCap * next[k] / top;
            fit.capped = true;
            fit.log_likelihood.push_back(dirichlet_log_likelihood(fit.alpha, mean_log, m));
            return fit;
        }
        fit.alpha = next;
        fit.log_likelihood.push_back(dirichlet_log_likelihood(fit.alpha, mean_log, m));
        if (change < options.tolerance) {
            fit.converged = true;
            return fit;
        }
    }
    fit.iterations = options.max_iterations;
    return fit;
}

DirichletAgreement dirichlet_agreement_test(const Tensor& pt, std::uint64_t seed) {
    validate_predictions(pt, 1e-6);
    const std::size_t n = pt.dim(0), m = pt.dim(1), c = pt.dim(2);
    if (m < 2) throw ContractError("dirichlet agreement needs at least two members");
    std::vector<double> ens(n, 0.0), dir(n, 0.0);
    std::vector<char> usable(n, 0);
    const auto nn = static_cast<std::ptrdiff_t>(n);
#pragma omp parallel for schedule(dynamic)
    for (std::ptrdiff_t ii = 0; ii < nn; ++ii) {
        const auto i = static_cast<std::size_t>(ii);
        Tensor members({m, c});
        Tensor single({1, m, c});
        for (std::size_t j = 0; j < m; ++j) {
            for (std::size_t k = 0; k < c; ++k) members(j, k) = single(0, j, k) = pt(i, j, k);
        }
        const DirichletFit fit = dirichlet_mle(members);
        if (!fit.converged && !fit.capped) continue;
        usable[i] = 1;
        Rng rng(derive_seed(seed, i));
        Tensor synthetic({1, m, c});
        for (std::size_t j = 0; j < m; ++j) {
            const auto draw = rng.dirichlet(fit.alpha);
            for (std::size_t k = 0; k < c; ++k) synthetic(0, j, k) = draw[k];
        }
        ens[i] = agreement(single);
        dir[i] = agreement(synthetic);
    }
    DirichletAgreement out;
    for (std::size_t i = 0; i < n; ++i) {
        if (!usable[i]) {
            ++out.skipped;
            continue;
        }
        ++out.evaluated;
        out.ensemble_agreement += ens[i];
        out.dirichlet_agreement += dir[i];
    }
    if (out.evaluated) {
        out.ensemble_agreement /= static_cast<double>(out.evaluated);
        out.dirichlet_agreement /= static_cast<double>(out.evaluated);
    }
    return out;
}

}  // namespace fed::metrics
