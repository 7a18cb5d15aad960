// Serial reference vs OpenMP kernels. Set OMP_NUM_THREADS to vary the
// parallel side; the serial side ignores it.
#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "hcp/alloc.hpp"
#include "hcp/kernels.hpp"

using namespace hcp::kernels;

namespace {

std::vector<double> filled(std::size_t n, unsigned seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> d(0.0, 1.0);
    std::vector<double> v(n);
    for (double& x : v) x = d(rng);
    return v;
}

using GemmFn = void (*)(std::span<const double>, std::span<const double>, std::span<double>, GemmDims, Trans, Trans,
                        bool);
using BatchedFn = void (*)(std::span<const double>, std::span<const double>, std::span<double>, std::size_t,
                           GemmDims, Trans, Trans, bool);
using SoftmaxFn = void (*)(std::span<const double>, std::span<double>, std::size_t, std::size_t);

template <GemmFn F>
void BM_Gemm(benchmark::State& state) {
    const auto m = static_cast<std::size_t>(state.range(0)), k = static_cast<std::size_t>(state.range(1)),
               n = static_cast<std::size_t>(state.range(2));
    const auto a = filled(m * k, 1), b = filled(k * n, 2);
    std::vector<double> c(m * n);
    for (auto _ : state) {
        F(a, b, c, {m, k, n}, Trans::No, Trans::No, false);
        benchmark::DoNotOptimize(c.data());
    }
    state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * m * k * n));
}

// Attention scores: [B, N, dh] x [B, N, dh]^T.
template <BatchedFn F>
void BM_AttentionScores(benchmark::State& state) {
    const auto B = static_cast<std::size_t>(state.range(0)), N = static_cast<std::size_t>(state.range(1)),
               dh = static_cast<std::size_t>(state.range(2));
    const auto q = filled(B * N * dh, 3), k = filled(B * N * dh, 4);
    std::vector<double> s(B * N * N);
    for (auto _ : state) {
        F(q, k, s, B, {N, dh, N}, Trans::No, Trans::Yes, false);
        benchmark::DoNotOptimize(s.data());
    }
    state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * B * N * N * dh));
}

template <SoftmaxFn F>
void BM_Softmax(benchmark::State& state) {
    const auto rows = static_cast<std::size_t>(state.range(0)), cols = static_cast<std::size_t>(state.range(1));
    const auto x = filled(rows * cols, 5);
    std::vector<double> y(x.size());
    for (auto _ : state) {
        F(x, y, rows, cols);
        benchmark::DoNotOptimize(y.data());
    }
    state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * rows * cols));
}

// Projection shapes of a training batch (32 samples x 36 tokens, d=16) and a
// larger square case.
void gemm_args(benchmark::internal::Benchmark* b) {
    b->Args({1152, 16, 16})->Args({4608, 16, 16})->Args({256, 256, 256});
}

void attention_args(benchmark::internal::Benchmark* b) { b->Args({32, 36, 8})->Args({128, 36, 8}); }

void softmax_args(benchmark::internal::Benchmark* b) { b->Args({1152, 36})->Args({4608, 36}); }

}  // namespace

BENCHMARK(BM_Gemm<serial::gemm>)->Name("gemm/serial")->Apply(gemm_args);
BENCHMARK(BM_Gemm<parallel::gemm>)->Name("gemm/parallel")->Apply(gemm_args)->UseRealTime();
BENCHMARK(BM_AttentionScores<serial::batched_gemm>)->Name("attention_scores/serial")->Apply(attention_args);
BENCHMARK(BM_AttentionScores<parallel::batched_gemm>)
    ->Name("attention_scores/parallel")
    ->Apply(attention_args)
    ->UseRealTime();
BENCHMARK(BM_Softmax<serial::softmax_rows>)->Name("softmax/serial")->Apply(softmax_args);
BENCHMARK(BM_Softmax<parallel::softmax_rows>)->Name("softmax/parallel")->Apply(softmax_args)->UseRealTime();

int main(int argc, char** argv) {
    hcp::tune_allocator();
    benchmark::Initialize(&argc, argv);
    if (benchmark::ReportUnrecognizedArguments(argc, argv)) return 1;
    benchmark::RunSpecifiedBenchmarks();
    benchmark::Shutdown();
    return 0;
}
