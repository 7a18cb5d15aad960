#include "hcp/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace hcp::kernels {

namespace {

// Rows [i0, i1) of C = op(A) * B with B already k x n row-major. Every
// element is accumulated over p in ascending order, whatever the tiling, so
// the serial and parallel paths (which split rows differently) agree bitwise.
template <bool TransA>
void gemm_rows(const double* a, const double* b, double* c, GemmDims d, std::size_t i0, std::size_t i1,
               bool accumulate) {
    constexpr std::size_t RI = 4, RJ = 4;
    const std::size_t m = d.m, k = d.k, n = d.n;
    auto A = [&](std::size_t i, std::size_t p) { return TransA ? a[p * m + i] : a[i * k + p]; };
    std::size_t i = i0;
    for (; i + RI <= i1; i += RI) {
        std::size_t j = 0;
        for (; j + RJ <= n; j += RJ) {
            double acc[RI][RJ];
            for (std::size_t r = 0; r < RI; ++r)
                for (std::size_t q = 0; q < RJ; ++q) acc[r][q] = accumulate ? c[(i + r) * n + j + q] : 0.0;
            for (std::size_t p = 0; p < k; ++p) {
                const double* bp = b + p * n + j;
                double av[RI];
                for (std::size_t r = 0; r < RI; ++r) av[r] = A(i + r, p);
                for (std::size_t r = 0; r < RI; ++r)
                    for (std::size_t q = 0; q < RJ; ++q) acc[r][q] += av[r] * bp[q];
            }
            for (std::size_t r = 0; r < RI; ++r)
                for (std::size_t q = 0; q < RJ; ++q) c[(i + r) * n + j + q] = acc[r][q];
        }
        for (std::size_t r = 0; r < RI; ++r)
            for (std::size_t jj = j; jj < n; ++jj) {
                double s = accumulate ? c[(i + r) * n + jj] : 0.0;
                for (std::size_t p = 0; p < k; ++p) s += A(i + r, p) * b[p * n + jj];
                c[(i + r) * n + jj] = s;
            }
    }
    for (; i < i1; ++i) {
        double* crow = c + i * n;
        if (!accumulate) std::fill(crow, crow + n, 0.0);
        for (std::size_t p = 0; p < k; ++p) {
            const double av = A(i, p);
            const double* brow = b + p * n;
            for (std::size_t jj = 0; jj < n; ++jj) crow[jj] += av * brow[jj];
        }
    }
}

inline void gemm_rows(const double* a, const double* b, double* c, GemmDims d, Trans ta, std::size_t i0,
                      std::size_t i1, bool accumulate) {
    if (ta == Trans::Yes)
        gemm_rows<true>(a, b, c, d, i0, i1, accumulate);
    else
        gemm_rows<false>(a, b, c, d, i0, i1, accumulate);
}

// B is n x k when transposed; bring each batch item to k x n.
const double* as_kn(const double* b, std::size_t batch, GemmDims d, Trans tb, std::vector<double>& scratch) {
    if (tb == Trans::No) return b;
    const std::size_t k = d.k, n = d.n;
    scratch.resize(batch * k * n);
    for (std::size_t t = 0; t < batch; ++t) {
        const double* src = b + t * n * k;
        double* dst = scratch.data() + t * k * n;
        for (std::size_t j = 0; j < n; ++j)
            for (std::size_t p = 0; p < k; ++p) dst[p * n + j] = src[j * k + p];
    }
    return scratch.data();
}

inline void softmax_row(const double* x, double* y, std::size_t cols) {
    double mx = x[0];
    for (std::size_t j = 1; j < cols; ++j) mx = std::max(mx, x[j]);
    double sum = 0.0;
    for (std::size_t j = 0; j < cols; ++j) {
        y[j] = std::exp(x[j] - mx);
        sum += y[j];
    }
    const double inv = 1.0 / sum;
    for (std::size_t j = 0; j < cols; ++j) y[j] *= inv;
}

bool in_parallel() {
#ifdef _OPENMP
    return omp_in_parallel() != 0;
#else
    return true;
#endif
}

}  // namespace

namespace serial {

void gemm(std::span<const double> a, std::span<const double> b, std::span<double> c, GemmDims dims,
          Trans ta, Trans tb, bool accumulate) {
    std::vector<double> scratch;
    const double* bk = as_kn(b.data(), 1, dims, tb, scratch);
    gemm_rows(a.data(), bk, c.data(), dims, ta, 0, dims.m, accumulate);
}

void batched_gemm(std::span<const double> a, std::span<const double> b, std::span<double> c,
                  std::size_t batch, GemmDims dims, Trans ta, Trans tb, bool accumulate) {
    const std::size_t sa = dims.m * dims.k, sb = dims.k * dims.n, sc = dims.m * dims.n;
    std::vector<double> scratch;
    const double* bk = as_kn(b.data(), batch, dims, tb, scratch);
    for (std::size_t t = 0; t < batch; ++t)
        gemm_rows(a.data() + t * sa, bk + t * sb, c.data() + t * sc, dims, ta, 0, dims.m, accumulate);
}

void softmax_rows(std::span<const double> x, std::span<double> y, std::size_t rows, std::size_t cols) {
    for (std::size_t r = 0; r < rows; ++r) softmax_row(x.data() + r * cols, y.data() + r * cols, cols);
}

}  // namespace serial

namespace parallel {

namespace {
constexpr std::size_t kRowChunk = 16;
}

void gemm(std::span<const double> a, std::span<const double> b, std::span<double> c, GemmDims dims,
          Trans ta, Trans tb, bool accumulate) {
    std::vector<double> scratch;
    const double* bk = as_kn(b.data(), 1, dims, tb, scratch);
    const auto chunks = static_cast<std::ptrdiff_t>((dims.m + kRowChunk - 1) / kRowChunk);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t ch = 0; ch < chunks; ++ch) {
        const std::size_t i0 = static_cast<std::size_t>(ch) * kRowChunk;
        gemm_rows(a.data(), bk, c.data(), dims, ta, i0, std::min(dims.m, i0 + kRowChunk), accumulate);
    }
}

void batched_gemm(std::span<const double> a, std::span<const double> b, std::span<double> c,
                  std::size_t batch, GemmDims dims, Trans ta, Trans tb, bool accumulate) {
    const std::size_t sa = dims.m * dims.k, sb = dims.k * dims.n, sc = dims.m * dims.n;
    std::vector<double> scratch;
    const double* bk = as_kn(b.data(), batch, dims, tb, scratch);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t t = 0; t < static_cast<std::ptrdiff_t>(batch); ++t) {
        const auto u = static_cast<std::size_t>(t);
        gemm_rows(a.data() + u * sa, bk + u * sb, c.data() + u * sc, dims, ta, 0, dims.m, accumulate);
    }
}

void softmax_rows(std::span<const double> x, std::span<double> y, std::size_t rows, std::size_t cols) {
    const auto n = static_cast<std::ptrdiff_t>(rows);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t r = 0; r < n; ++r) softmax_row(x.data() + r * cols, y.data() + r * cols, cols);
}

}  // namespace parallel

void gemm(std::span<const double> a, std::span<const double> b, std::span<double> c, GemmDims dims,
          Trans ta, Trans tb, bool accumulate) {
    if (dims.m * dims.k * dims.n >= kParallelThreshold && dims.m > 1 && !in_parallel() && max_threads() > 1)
        parallel::gemm(a, b, c, dims, ta, tb, accumulate);
    else
        serial::gemm(a, b, c, dims, ta, tb, accumulate);
}

void batched_gemm(std::span<const double> a, std::span<const double> b, std::span<double> c,
                  std::size_t batch, GemmDims dims, Trans ta, Trans tb, bool accumulate) {
    if (batch * dims.m * dims.k * dims.n >= kParallelThreshold && !in_parallel() && max_threads() > 1)
        parallel::batched_gemm(a, b, c, batch, dims, ta, tb, accumulate);
    else
        serial::batched_gemm(a, b, c, batch, dims, ta, tb, accumulate);
}

void softmax_rows(std::span<const double> x, std::span<double> y, std::size_t rows, std::size_t cols) {
    if (rows * cols >= kParallelThreshold && !in_parallel() && max_threads() > 1)
        parallel::softmax_rows(x, y, rows, cols);
    else
        serial::softmax_rows(x, y, rows, cols);
}

int max_threads() {
#ifdef _OPENMP
    return omp_get_max_threads();
#else
    return 1;
#endif
}

}  // namespace hcp::kernels
