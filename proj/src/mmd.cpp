#include "fed/mmd.hpp"

#include <algorithm>
#include <cmath>

#include "fed/errors.hpp"
#include "fed/kernels.hpp"

namespace fed::mmd {

void KernelSpec::validate() const {
    switch (kind) {
        case KernelKind::kLinear:
            if (!lengthscales.empty()) throw ConfigError("linear kernel takes no lengthscales");
            return;
        case KernelKind::kRbf:
            if (lengthscales.size() != 1) throw ConfigError("rbf kernel takes exactly one lengthscale");
            break;
        case KernelKind::kRbfMixture:
            if (lengthscales.empty()) throw ConfigError("rbf mixture needs at least one lengthscale");
            break;
    }
    for (double l : lengthscales) {
        if (!(l > 0.0)) throw ConfigError("kernel lengthscales must be positive");
    }
}

std::string KernelSpec::kind_name() const {
    switch (kind) {
        case KernelKind::kLinear: return "linear";
        case KernelKind::kRbf: return "rbf";
        case KernelKind::kRbfMixture: return "rbf_mixture";
    }
    return "unknown";
}

KernelKind KernelSpec::parse_kind(const std::string& name) {
    if (name == "linear") return KernelKind::kLinear;
    if (name == "rbf") return KernelKind::kRbf;
    if (name == "rbf_mixture") return KernelKind::kRbfMixture;
    throw ConfigError("unknown kernel kind '" + name + "'");
}

double KernelSpec::from_distance(double sq_distance, double dot) const {
    if (kind == KernelKind::kLinear) return dot;
    double k = 0.0;
    for (double l : lengthscales) k += std::exp(-sq_distance / (2.0 * l * l));
    return k;
}

double kernel_eval(const KernelSpec& spec, std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) {
        throw DimensionError("kernel_eval: lengths " + std::to_string(a.size()) + " and " + std::to_string(b.size()));
    }
    double sq = 0.0, dot = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        sq += d * d;
        dot += a[i] * b[i];
    }
    return spec.from_distance(sq, dot);
}

namespace {

void check_sets(const Tensor& p, const Tensor& q) {
    if (p.rank() != 2 || q.rank() != 2) throw DimensionError("mmd: representation sets must be matrices");
    if (p.rows() == 0) throw ContractError("mmd: empty representation set");
    if (p.rows() != q.rows()) {
        throw DimensionError("mmd: set sizes differ (" + std::to_string(p.rows()) + " vs " +
                             std::to_string(q.rows()) + ")");
    }
    if (p.cols() != q.cols()) throw DimensionError("mmd: representation lengths differ");
}

// Kernel Gram matrix between the rows of x and y.
std::vector<double> gram(const Tensor& x, const Tensor& y, const KernelSpec& spec) {
    const std::size_t nx = x.rows(), ny = y.rows(), dim = x.cols();
    std::vector<double> out(nx * ny);
    if (spec.kind == KernelKind::kLinear) {
        kernels::matmul_bt(x.data(), y.data(), out, nx, dim, ny);
        return out;
    }
    kernels::sqdist_gram(x.data(), y.data(), out, nx, ny, dim);
    for (double& v : out) v = spec.from_distance(v, 0.0);
    return out;
}

double sorted_sum(std::vector<double> values) {
    std::sort(values.begin(), values.end());
    double acc = 0.0;
    for (double v : values) acc += v;
    return acc;
}

}  // namespace

double mmd2_batch(const Tensor& reps_p, const Tensor& reps_q, const KernelSpec& spec) {
    check_sets(reps_p, reps_q);
    spec.validate();
    const double m = static_cast<double>(reps_p.rows());
    const double pp = sorted_sum(gram(reps_p, reps_p, spec));
    const double qq = sorted_sum(gram(reps_q, reps_q, spec));
    const double pq = sorted_sum(gram(reps_p, reps_q, spec));
    return (pp + qq - 2.0 * pq) / (m * m);
}

double mmd2_bruteforce(const Tensor& reps_p, const Tensor& reps_q, const KernelSpec& spec) {
    check_sets(reps_p, reps_q);
    spec.validate();
    const std::size_t m = reps_p.rows();
    double pp = 0.0, qq = 0.0, pq = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < m; ++j) {
            pp += kernel_eval(spec, reps_p.row(i), reps_p.row(j));
            qq += kernel_eval(spec, reps_q.row(i), reps_q.row(j));
            pq += kernel_eval(spec, reps_p.row(i), reps_q.row(j));
        }
    }
    const double mm = static_cast<double>(m * m);
    return pp / mm + qq / mm - 2.0 * pq / mm;
}

Tensor mmd2_grad_q(const Tensor& reps_p, const Tensor& reps_q, const KernelSpec& spec) {
    check_sets(reps_p, reps_q);
    const std::size_t m = reps_q.rows(), dim = reps_q.cols();
    const double inv_m2 = 1.0 / static_cast<double>(m * m);
    Tensor grad({m, dim}, 0.0);
    if (spec.kind == KernelKind::kLinear) {
        // d/dq_a = (2/M^2) (sum_j q_j - sum_i p_i)
        std::vector<double> diff(dim, 0.0);
        for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t d = 0; d < dim; ++d) diff[d] += reps_q(i, d) - reps_p(i, d);
        }
        for (std::size_t a = 0; a < m; ++a) {
            for (std::size_t d = 0; d < dim; ++d) grad(a, d) = 2.0 * inv_m2 * diff[d];
        }
        return grad;
    }
    // For an RBF component, d k(x, y) / dx = -k(x, y) (x - y) / l^2.
    std::vector<double> sq_qq(m * m), sq_pq(m * m);
    kernels::sqdist_gram(reps_q.data(), reps_q.data(), sq_qq, m, m, dim);
    kernels::sqdist_gram(reps_q.data(), reps_p.data(), sq_pq, m, m, dim);
    for (double l : spec.lengthscales) {
        const double inv_l2 = 1.0 / (l * l);
        for (std::size_t a = 0; a < m; ++a) {
            auto g = grad.row(a);
            const auto qa = reps_q.row(a);
            for (std::size_t j = 0; j < m; ++j) {
                const double kqq = std::exp(-0.5 * sq_qq[a * m + j] * inv_l2);
                const double kqp = std::exp(-0.5 * sq_pq[a * m + j] * inv_l2);
                const auto qj = reps_q.row(j);
                const auto pj = reps_p.row(j);
                for (std::size_t d = 0; d < dim; ++d) {
                    g[d] += 2.0 * inv_m2 * inv_l2 * (-kqq * (qa[d] - qj[d]) + kqp * (qa[d] - pj[d]));
                }
            }
        }
    }
    return grad;
}

ad::Var mmd2(const Tensor& reps_p, ad::Var reps_q, const KernelSpec& spec) {
    const double value = mmd2_batch(reps_p, reps_q.value(), spec);
    return reps_q.graph().record(Tensor::scalar(value), {reps_q},
                                 [reps_p, reps_q, spec](ad::Graph& g, const Tensor& grad_out) {
                                     Tensor gq = mmd2_grad_q(reps_p, reps_q.value(), spec);
                                     for (double& v : gq.data()) v *= grad_out[0];
                                     g.accumulate(reps_q, gq);
                                 });
}

}  // namespace fed::mmd
