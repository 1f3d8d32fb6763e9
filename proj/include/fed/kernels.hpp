#pragma once

// Dense f64 kernels. Each kernel has a plain serial reference and an OpenMP
// version. The OpenMP matmuls are register-tiled over blocks of output rows
// but add every output's terms in the same order as the reference, so both
// produce bit-identical results for any thread count.

#include <cstddef>
#include <span>

namespace fed::kernels {

/// out[m x n] = a[m x k] * b[k x n]
void matmul_serial(std::span<const double> a, std::span<const double> b, std::span<double> out,
                   std::size_t m, std::size_t k, std::size_t n);
void matmul(std::span<const double> a, std::span<const double> b, std::span<double> out,
            std::size_t m, std::size_t k, std::size_t n);

/// out[m x n] = a[m x k] * b[n x k]^T
void matmul_bt_serial(std::span<const double> a, std::span<const double> b, std::span<double> out,
                      std::size_t m, std::size_t k, std::size_t n);
void matmul_bt(std::span<const double> a, std::span<const double> b, std::span<double> out,
               std::size_t m, std::size_t k, std::size_t n);

/// out[k x n] = a[m x k]^T * b[m x n]
void matmul_at_serial(std::span<const double> a, std::span<const double> b, std::span<double> out,
                      std::size_t m, std::size_t k, std::size_t n);
void matmul_at(std::span<const double> a, std::span<const double> b, std::span<double> out,
               std::size_t m, std::size_t k, std::size_t n);

/// Squared distances out[i][j] = |x_i|^2 + |y_j|^2 - 2 x_i.y_j, clamped at 0.
/// x is [nx x dim], y is [ny x dim].
void sqdist_gram_serial(std::span<const double> x, std::span<const double> y, std::span<double> out,
                        std::size_t nx, std::size_t ny, std::size_t dim);
void sqdist_gram(std::span<const double> x, std::span<const double> y, std::span<double> out,
                 std::size_t nx, std::size_t ny, std::size_t dim);

/// Number of OpenMP threads the parallel kernels will use.
int max_threads();

}  // namespace fed::kernels
