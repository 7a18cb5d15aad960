#pragma once

#include <cstddef>
#include <span>

// Dense kernels behind the autodiff ops.
//
// Each kernel exists twice: a plain serial reference in `serial` and an
// OpenMP version in `parallel`. Both accumulate every output element over
// the inner index in the same order, so their results are bitwise equal;
// tests/test_kernels.cpp holds them to that. The unqualified entry points
// dispatch to the parallel version once the work is large enough and we are
// not already inside a parallel region.
namespace hcp::kernels {

enum class Trans { No, Yes };

struct GemmDims {
    std::size_t m, k, n;
};

namespace serial {

// C (m x n) (+)= op(A) * op(B), where op(A) is m x k and op(B) is k x n.
void gemm(std::span<const double> a, std::span<const double> b, std::span<double> c, GemmDims dims,
          Trans ta, Trans tb, bool accumulate);

void batched_gemm(std::span<const double> a, std::span<const double> b, std::span<double> c,
                  std::size_t batch, GemmDims dims, Trans ta, Trans tb, bool accumulate);

void softmax_rows(std::span<const double> x, std::span<double> y, std::size_t rows, std::size_t cols);

}  // namespace serial

namespace parallel {

void gemm(std::span<const double> a, std::span<const double> b, std::span<double> c, GemmDims dims,
          Trans ta, Trans tb, bool accumulate);

void batched_gemm(std::span<const double> a, std::span<const double> b, std::span<double> c,
                  std::size_t batch, GemmDims dims, Trans ta, Trans tb, bool accumulate);

void softmax_rows(std::span<const double> x, std::span<double> y, std::size_t rows, std::size_t cols);

}  // namespace parallel

void gemm(std::span<const double> a, std::span<const double> b, std::span<double> c, GemmDims dims,
          Trans ta, Trans tb, bool accumulate);

void batched_gemm(std::span<const double> a, std::span<const double> b, std::span<double> c,
                  std::size_t batch, GemmDims dims, Trans ta, Trans tb, bool accumulate);

void softmax_rows(std::span<const double> x, std::span<double> y, std::size_t rows, std::size_t cols);

// Work (multiply-adds) above which the dispatchers go parallel.
inline constexpr std::size_t kParallelThreshold = 1u << 16;

int max_threads();

}  // namespace hcp::kernels
