#pragma once

// Dirichlet maximum-likelihood fit and the agreement comparison between an
// ensemble and Dirichlet samples matched to it.

#include <cstddef>
#include <cstdint>
#include <vector>

#include "fed/tensor.hpp"

namespace fed::metrics {

double digamma(double x);
double trigamma(double x);
/// Solves digamma(x) = y by Newton iteration.
double inverse_digamma(double y);

struct DirichletFit {
    std::vector<double> alpha;
    std::size_t iterations = 0;
    bool converged = false;
    /// Concentration hit the cap: the samples are (near) identical and the fit
    /// is effectively a point mass at their mean.
    bool capped = false;
    /// Log-likelihood after each iteration (starting with the initial guess).
    std::vector<double> log_likelihood;
};

inline constexpr double kAlphaCap = 1e6;

struct DirichletOptions {
    std::size_t max_iterations = 1000;
    double tolerance = 1e-8;
};

/// samples: [M x C] probability vectors, clamped to [1e-10, 1] and renormalised.
/// Fixed point alpha_k <- invpsi(psi(sum alpha) + mean log p_k) from a
/// moment-matched start.
DirichletFit dirichlet_mle(const Tensor& samples, const DirichletOptions& options = {});

/// Total log-likelihood of M samples with mean log-probabilities `mean_log_p`.
double dirichlet_log_likelihood(const std::vector<double>& alpha, const std::vector<double>& mean_log_p,
                                std::size_t m);

struct DirichletAgreement {
    double ensemble_agreement = 0.0;
    double dirichlet_agreement = 0.0;
    std::size_t evaluated = 0;
    /// Inputs whose fit ran out of iterations without converging.
    std::size_t skipped = 0;
};

/// Per input: fit a Dirichlet to the M member rows, draw M vectors from it
/// (input i uses Rng(derive_seed(seed, i))), and compare agreements over the
/// inputs that were not skipped.
DirichletAgreement dirichlet_agreement_test(const Tensor& pt, std::uint64_t seed);

}  // namespace fed::metrics
