#pragma once

// Kernels over function representations and the biased (V-statistic) batch
// MMD^2 used as the distillation loss.
//
// A function representation is the concatenation of one function's class
// probability vectors over a batch; a set of M representations is stored as
// the rows of an [M x (B*C)] tensor.

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "fed/autodiff.hpp"
#include "fed/tensor.hpp"

namespace fed::mmd {

enum class KernelKind { kLinear, kRbf, kRbfMixture };

/// RBF components use exp(-|a - b|^2 / (2 l^2)); a mixture is the
/// unweighted sum of its components.
struct KernelSpec {
    KernelKind kind = KernelKind::kRbfMixture;
    std::vector<double> lengthscales;

    static KernelSpec linear() { return {KernelKind::kLinear, {}}; }
    static KernelSpec rbf(double lengthscale) { return {KernelKind::kRbf, {lengthscale}}; }
    static KernelSpec rbf_mixture(std::vector<double> lengthscales) {
        return {KernelKind::kRbfMixture, std::move(lengthscales)};
    }

    void validate() const;
    std::string kind_name() const;
    static KernelKind parse_kind(const std::string& name);

    /// Kernel value given |a-b|^2 and a.b.
    double from_distance(double sq_distance, double dot) const;

    friend bool operator==(const KernelSpec&, const KernelSpec&) = default;
};

double kernel_eval(const KernelSpec& spec, std::span<const double> a, std::span<const double> b);

/// (1/M^2) sum_{i,j} [k(p_i,p_j) + k(q_i,q_j) - 2 k(p_i,q_j)], Gram matrices
/// built from the |a|^2 + |b|^2 - 2 a.b expansion. Each of the three sums is
/// accumulated in sorted order, which makes the value exactly symmetric in
/// its arguments and independent of row order.
double mmd2_batch(const Tensor& reps_p, const Tensor& reps_q, const KernelSpec& spec);

/// Direct double loops over kernel_eval with explicit differences. Test oracle.
double mmd2_bruteforce(const Tensor& reps_p, const Tensor& reps_q, const KernelSpec& spec);

/// Gradient of mmd2_batch with respect to the rows of `reps_q`.
Tensor mmd2_grad_q(const Tensor& reps_p, const Tensor& reps_q, const KernelSpec& spec);

/// Differentiable node: MMD^2 between constant teacher reps and `reps_q`.
ad::Var mmd2(const Tensor& reps_p, ad::Var reps_q, const KernelSpec& spec);

}  // namespace fed::mmd
