#include "fed/kernels.hpp"

#include <algorithm>
#include <vector>

#include <omp.h>

namespace fed::kernels {
namespace {

// Below this many multiply-adds the parallel region costs more than it saves.
constexpr std::size_t kParallelWork = 1 << 15;

inline void matmul_row(const double* a_row, const double* b, double* out_row, std::size_t k,
                       std::size_t n) {
    std::fill(out_row, out_row + n, 0.0);
    for (std::size_t p = 0; p < k; ++p) {
        const double s = a_row[p];
        const double* b_row = b + p * n;
        for (std::size_t j = 0; j < n; ++j) out_row[j] += s * b_row[j];
    }
}

inline void matmul_bt_row(const double* a_row, const double* b, double* out_row, std::size_t k,
                          std::size_t n) {
    for (std::size_t j = 0; j < n; ++j) {
        const double* b_row = b + j * k;
        double acc = 0.0;
        for (std::size_t p = 0; p < k; ++p) acc += a_row[p] * b_row[p];
        out_row[j] = acc;
    }
}

// Row p of a^T b: sum_i a[i][p] * b[i][:]
inline void matmul_at_row(const double* a, const double* b, double* out_row, std::size_t p,
                          std::size_t m, std::size_t k, std::size_t n) {
    std::fill(out_row, out_row + n, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
        const double s = a[i * k + p];
        const double* b_row = b + i * n;
        for (std::size_t j = 0; j < n; ++j) out_row[j] += s * b_row[j];
    }
}

// Blocked product used by the parallel kernels: R output rows share each
// pass over a row of b. Row r of the left operand is a[r * rs + q * cs] over
// the inner index q. Every output still sums its terms in increasing q
// starting from zero, exactly like the row kernels above, so the two paths
// agree bit for bit.
constexpr std::size_t kTileRows = 4;

template <std::size_t R>
void tile_rows(const double* a, std::size_t rs, std::size_t cs, const double* b, double* out, std::size_t inner,
               std::size_t n) {
    std::fill(out, out + R * n, 0.0);
    for (std::size_t q = 0; q < inner; ++q) {
        const double* b_row = b + q * n;
        double s[R];
        for (std::size_t r = 0; r < R; ++r) s[r] = a[r * rs + q * cs];
        for (std::size_t j = 0; j < n; ++j) {
            const double bj = b_row[j];
            for (std::size_t r = 0; r < R; ++r) out[r * n + j] += s[r] * bj;
        }
    }
}

// out[rows x n] with rows split into tiles handed to OpenMP.
void tiled_product(const double* a, std::size_t rs, std::size_t cs, const double* b, double* out, std::size_t rows,
                   std::size_t inner, std::size_t n) {
    const auto blocks = static_cast<std::ptrdiff_t>((rows + kTileRows - 1) / kTileRows);
#pragma omp parallel for schedule(static) if (rows * inner * n > kParallelWork)
    for (std::ptrdiff_t blk = 0; blk < blocks; ++blk) {
        const std::size_t r0 = static_cast<std::size_t>(blk) * kTileRows;
        const double* a0 = a + r0 * rs;
        double* o0 = out + r0 * n;
        switch (std::min(kTileRows, rows - r0)) {
            case 4: tile_rows<4>(a0, rs, cs, b, o0, inner, n); break;
            case 3: tile_rows<3>(a0, rs, cs, b, o0, inner, n); break;
            case 2: tile_rows<2>(a0, rs, cs, b, o0, inner, n); break;
            default: tile_rows<1>(a0, rs, cs, b, o0, inner, n); break;
        }
    }
}

inline double sq_norm(const double* v, std::size_t dim) {
    double acc = 0.0;
    for (std::size_t d = 0; d < dim; ++d) acc += v[d] * v[d];
    return acc;
}

inline void sqdist_row(const double* x_row, double x_norm, const double* y,
                       const std::vector<double>& y_norms, double* out_row, std::size_t ny,
                       std::size_t dim) {
    for (std::size_t j = 0; j < ny; ++j) {
        const double* y_row = y + j * dim;
        double dot = 0.0;
        for (std::size_t d = 0; d < dim; ++d) dot += x_row[d] * y_row[d];
        out_row[j] = std::max(0.0, x_norm + y_norms[j] - 2.0 * dot);
    }
}

}  // namespace

void matmul_serial(std::span<const double> a, std::span<const double> b, std::span<double> out,
                   std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) matmul_row(a.data() + i * k, b.data(), out.data() + i * n, k, n);
}

void matmul(std::span<const double> a, std::span<const double> b, std::span<double> out, std::size_t m,
            std::size_t k, std::size_t n) {
    tiled_product(a.data(), k, 1, b.data(), out.data(), m, k, n);
}

void matmul_bt_serial(std::span<const double> a, std::span<const double> b, std::span<double> out,
                      std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) matmul_bt_row(a.data() + i * k, b.data(), out.data() + i * n, k, n);
}

void matmul_bt(std::span<const double> a, std::span<const double> b, std::span<double> out,
               std::size_t m, std::size_t k, std::size_t n) {
    // Transposing b keeps each dot product in the same order as the reference.
    std::vector<double> bt(k * n);
    for (std::size_t j = 0; j < n; ++j) {
        for (std::size_t p = 0; p < k; ++p) bt[p * n + j] = b[j * k + p];
    }
    tiled_product(a.data(), k, 1, bt.data(), out.data(), m, k, n);
}

void matmul_at_serial(std::span<const double> a, std::span<const double> b, std::span<double> out,
                      std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t p = 0; p < k; ++p) matmul_at_row(a.data(), b.data(), out.data() + p * n, p, m, k, n);
}

void matmul_at(std::span<const double> a, std::span<const double> b, std::span<double> out,
               std::size_t m, std::size_t k, std::size_t n) {
    tiled_product(a.data(), 1, k, b.data(), out.data(), k, m, n);
}

void sqdist_gram_serial(std::span<const double> x, std::span<const double> y, std::span<double> out,
                        std::size_t nx, std::size_t ny, std::size_t dim) {
    std::vector<double> y_norms(ny);
    for (std::size_t j = 0; j < ny; ++j) y_norms[j] = sq_norm(y.data() + j * dim, dim);
    for (std::size_t i = 0; i < nx; ++i) {
        const double* x_row = x.data() + i * dim;
        sqdist_row(x_row, sq_norm(x_row, dim), y.data(), y_norms, out.data() + i * ny, ny, dim);
    }
}

void sqdist_gram(std::span<const double> x, std::span<const double> y, std::span<double> out,
                 std::size_t nx, std::size_t ny, std::size_t dim) {
    std::vector<double> y_norms(ny);
    for (std::size_t j = 0; j < ny; ++j) y_norms[j] = sq_norm(y.data() + j * dim, dim);
    const auto rows = static_cast<std::ptrdiff_t>(nx);
#pragma omp parallel for schedule(static) if (nx * ny * dim > kParallelWork)
    for (std::ptrdiff_t i = 0; i < rows; ++i) {
        const double* x_row = x.data() + i * dim;
        sqdist_row(x_row, sq_norm(x_row, dim), y.data(), y_norms, out.data() + i * ny, ny, dim);
    }
}

int max_threads() { return omp_get_max_threads(); }

}  // namespace fed::kernels
