#include "fed/random.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "fed/errors.hpp"

namespace fed {

std::uint64_t derive_seed(std::uint64_t root, std::uint64_t stream) {
    std::uint64_t z = root + (stream + 1) * 0x9E3779B97F4A7C15ULL;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

double Rng::uniform() { return std::generate_canonical<double, 53>(engine_); }

double Rng::uniform_open() {
    double u = 0.0;
    do {
        u = uniform();
    } while (u == 0.0);
    return u;
}

double Rng::normal() { return normal_(engine_); }

std::size_t Rng::index(std::size_t n) {
    if (n == 0) throw ContractError("Rng::index on empty range");
    return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_);
}

std::vector<std::size_t> Rng::permutation(std::size_t n) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    shuffle(idx.begin(), idx.end());
    return idx;
}

double Rng::log_gamma_variate(double shape) {
    if (!(shape > 0.0)) throw DomainError("gamma shape must be positive");
    if (shape < 1.0) {
        // G(a) = G(a+1) * U^(1/a)
        return log_gamma_variate(shape + 1.0) + std::log(uniform_open()) / shape;
    }
    const double d = shape - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
        double x = 0.0, v = 0.0;
        do {
            x = normal();
            v = 1.0 + c * x;
        } while (v <= 0.0);
        v = v * v * v;
        const double u = uniform_open();
        if (u < 1.0 - 0.0331 * x * x * x * x) return std::log(d * v);
        if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return std::log(d * v);
    }
}

double Rng::gamma(double shape) { return std::exp(log_gamma_variate(shape)); }

double Rng::beta(double a, double b) {
    const double lx = log_gamma_variate(a);
    const double ly = log_gamma_variate(b);
    // x / (x + y) = 1 / (1 + exp(ly - lx))
    return 1.0 / (1.0 + std::exp(ly - lx));
}

std::vector<double> Rng::dirichlet(const std::vector<double>& alpha) {
    std::vector<double> logs(alpha.size());
    for (std::size_t k = 0; k < alpha.size(); ++k) logs[k] = log_gamma_variate(alpha[k]);
    const double hi = *std::max_element(logs.begin(), logs.end());
    double total = 0.0;
    for (double& l : logs) {
        l = std::exp(l - hi);
        total += l;
    }
    for (double& l : logs) l /= total;
    return logs;
}

}  // namespace fed
