#include <benchmark/benchmark.h>

#include "aedet/kernels.h"

#include <omp.h>

#include <random>

using namespace aedet;

namespace {

Tensor<float> random_tensor(Shape s, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<float> dist(-1, 1);
    Tensor<float> t(s);
    for (float& x : t.v) x = dist(rng);
    return t;
}

struct ConvCase {
    Shape in, w;
    int stride, pad;
};

// the three conv shapes dominating detector training time
const ConvCase kCases[] = {
    {{16, 3, 64, 64}, {16, 3, 3, 3}, 1, 1},     // stem
    {{16, 16, 64, 64}, {16, 16, 3, 3}, 2, 1},   // stage downsample
    {{16, 128, 8, 8}, {128, 128, 3, 3}, 1, 1},  // deep stage
};

void bench_conv_ref(benchmark::State& state) {
    const ConvCase& c = kCases[state.range(0)];
    Tensor<float> in = random_tensor(c.in, 1);
    Tensor<float> w = random_tensor(c.w, 2);
    Tensor<float> b = random_tensor(Shape{1, 1, 1, c.w.n}, 3);
    for (auto _ : state) {
        Tensor<float> out;
        kernels::conv2d_forward_ref(in, w, b, c.stride, c.pad, out);
        benchmark::DoNotOptimize(out.v.data());
    }
}

void bench_conv_omp(benchmark::State& state) {
    const ConvCase& c = kCases[state.range(0)];
    omp_set_num_threads(static_cast<int>(state.range(1)));
    Tensor<float> in = random_tensor(c.in, 1);
    Tensor<float> w = random_tensor(c.w, 2);
    Tensor<float> b = random_tensor(Shape{1, 1, 1, c.w.n}, 3);
    for (auto _ : state) {
        Tensor<float> out;
        kernels::conv2d_forward(in, w, b, c.stride, c.pad, out);
        benchmark::DoNotOptimize(out.v.data());
    }
}

void bench_conv_backward_omp(benchmark::State& state) {
    const ConvCase& c = kCases[state.range(0)];
    omp_set_num_threads(static_cast<int>(state.range(1)));
    Tensor<float> in = random_tensor(c.in, 1);
    Tensor<float> w = random_tensor(c.w, 2);
    Tensor<float> b = random_tensor(Shape{1, 1, 1, c.w.n}, 3);
    Shape os = kernels::conv_out_shape(c.in, c.w, c.stride, c.pad);
    Tensor<float> gout = random_tensor(os, 4);
    for (auto _ : state) {
        Tensor<float> gin, gw, gb;
        kernels::conv2d_backward_input(gout, w, c.stride, c.pad, c.in, gin);
        kernels::conv2d_backward_weight(in, gout, c.stride, c.pad, c.w, gw, gb);
        benchmark::DoNotOptimize(gin.v.data());
        benchmark::DoNotOptimize(gw.v.data());
    }
}

}  // namespace

BENCHMARK(bench_conv_ref)->DenseRange(0, 2);
BENCHMARK(bench_conv_omp)
    ->ArgsProduct({benchmark::CreateDenseRange(0, 2, 1), {1, 2, 4}});
BENCHMARK(bench_conv_backward_omp)
    ->ArgsProduct({benchmark::CreateDenseRange(0, 2, 1), {1, 2, 4}});

BENCHMARK_MAIN();
