#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <vector>

namespace fed {

/// Child seed for stream `stream` of `root`: splitmix64(root + (stream+1) * golden).
/// Used wherever work is split into independently seeded units (ensemble
/// members, epsilon draws per function, ...).
std::uint64_t derive_seed(std::uint64_t root, std::uint64_t stream);

/// Seeded random source. All stochastic code in the project draws from this.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    double uniform();          // [0, 1)
    double uniform_open();     // (0, 1)
    double normal();           // N(0, 1)
    std::size_t index(std::size_t n);  // uniform in [0, n)

    /// Gamma(shape, 1) via Marsaglia-Tsang; shapes below 1 use the
    /// U^(1/shape) boost.
    double gamma(double shape);
    /// log of a Gamma(shape, 1) draw; stays finite for tiny shapes where the
    /// draw itself underflows.
    double log_gamma_variate(double shape);
    /// Beta(a, b) as X / (X + Y) computed in log space.
    double beta(double a, double b);
    /// Point on the simplex from Dirichlet(alpha).
    std::vector<double> dirichlet(const std::vector<double>& alpha);

    template <typename It>
    void shuffle(It first, It last) {
        std::shuffle(first, last, engine_);
    }
    std::vector<std::size_t> permutation(std::size_t n);

    std::mt19937_64& engine() { return engine_; }

private:
    std::mt19937_64 engine_;
    std::normal_distribution<double> normal_;
};

}  // namespace fed
