// Serial-reference vs OpenMP kernel throughput on the shapes the training
// loop actually hits. Results from both lanes must match bit-exactly
// (asserted here as well as in the unit tests).

#include <chrono>
#include <cstdio>
#include <cstring>

#include "biasblend/kernels.hpp"
#include "biasblend/ops.hpp"
#include "biasblend/rng.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

using namespace bb;

namespace {

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

template <class F>
double time_best_of(int reps, F&& fn) {
    double best = 1e30;
    for (int r = 0; r < reps; ++r) {
        const auto t0 = std::chrono::steady_clock::now();
        fn();
        best = std::min(best, seconds_since(t0));
    }
    return best;
}

void bench_matmul(std::int64_t m, std::int64_t k, std::int64_t n) {
    Rng rng(42);
    Tensor a = Tensor::uniform({m, k}, rng, -1, 1);
    Tensor b = Tensor::uniform({k, n}, rng, -1, 1);
    Tensor out_serial({m, n}), out_parallel({m, n});
    const double gf = 2.0 * double(m) * double(k) * double(n) / 1e9;

    const double ts = time_best_of(3, [&] { kernels::matmul_into_serial(a, b, out_serial); });
    const double tp = time_best_of(3, [&] { kernels::matmul_into(a, b, out_parallel); });
    const bool same = std::memcmp(out_serial.data.data(), out_parallel.data.data(),
                                  out_serial.data.size() * sizeof(float)) == 0;
    std::printf("matmul %4lldx%4lldx%4lld  serial %7.2f GF/s  openmp %7.2f GF/s  x%.2f  %s\n",
                (long long)m, (long long)k, (long long)n, gf / ts, gf / tp, ts / tp,
                same ? "bit-identical" : "MISMATCH");
}

void bench_conv(std::int64_t n, Shape in, kernels::ConvSpec spec) {
    Rng rng(43);
    Tensor x = Tensor::uniform({n, in[0], in[1], in[2]}, rng, -1, 1);
    Tensor kern = Tensor::uniform({spec.out_channels, spec.in_channels, spec.kernel, spec.kernel},
                                  rng, -1, 1);
    const std::int64_t ho = spec.out_dim(in[1]), wo = spec.out_dim(in[2]);
    const double gf = 2.0 * double(n) * double(spec.out_channels) * double(ho) * double(wo) *
                      double(spec.in_channels) * double(spec.kernel) * double(spec.kernel) / 1e9;

    Tensor out_parallel;
    const double tp = time_best_of(3, [&] { out_parallel = kernels::conv2d_batch(x, kern, spec); });
    // serial lane: per-sample reference kernel
    Tensor out_serial({n, spec.out_channels, ho, wo});
    const double ts = time_best_of(1, [&] {
        for (std::int64_t s = 0; s < n; ++s)
            kernels::conv2d_into_serial(x.data.data() + s * in[0] * in[1] * in[2], in[1], in[2],
                                        kern.data.data(), spec,
                                        out_serial.data.data() + s * spec.out_channels * ho * wo,
                                        ho, wo);
    });
    const bool same = std::memcmp(out_serial.data.data(), out_parallel.data.data(),
                                  out_serial.data.size() * sizeof(float)) == 0;
    std::printf("conv2d n=%3lld (%3lld,%2lld,%2lld)->o=%3lld  serial %7.2f GF/s  openmp %7.2f GF/s  x%.2f  %s\n",
                (long long)n, (long long)in[0], (long long)in[1], (long long)in[2],
                (long long)spec.out_channels, gf / ts, gf / tp, ts / tp,
                same ? "bit-identical" : "MISMATCH");
}

}  // namespace

int main() {
#ifdef _OPENMP
    std::printf("OpenMP threads: %d\n", omp_get_max_threads());
#else
    std::printf("built without OpenMP\n");
#endif
    bench_matmul(128, 3072, 1024);   // forward, first MLP layer
    bench_matmul(128, 1024, 1024);   // forward, inner MLP layer
    bench_matmul(1024, 128, 1024);   // dW
    bench_matmul(2048, 2048, 2048);  // mixer-width composition
    bench_conv(128, {3, 32, 32}, {3, 1, 1, 3, 1});     // S-CNN layer 1
    bench_conv(128, {64, 4, 4}, {3, 2, 1, 64, 256});   // S-CNN layer 5
    bench_conv(64, {256, 2, 2}, {3, 1, 1, 256, 256});  // S-CNN layer 6
    return 0;
}
