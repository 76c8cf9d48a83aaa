// Serial-reference vs OpenMP kernel comparison. Run with
//   ./kernel_bench --benchmark_filter=conv
// to narrow to one kernel family.

#include <benchmark/benchmark.h>

#include "vesselseg/mesh.hpp"
#include "vesselseg/nn/kernels.hpp"
#include "vesselseg/phantom.hpp"
#include "vesselseg/preprocess.hpp"
#include "vesselseg/rng.hpp"
#include "vesselseg/surface_distance.hpp"

namespace {

using namespace vseg;

Tensor random_tensor(std::vector<int> shape, std::uint64_t seed) {
    Tensor t(std::move(shape));
    Rng rng(seed);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.normal();
    return t;
}

// ---- conv3d ---------------------------------------------------------------

void conv_args(benchmark::internal::Benchmark* b) {
    b->Args({8, 16})->Args({8, 32})->Unit(benchmark::kMillisecond);
}

void BM_conv3d_forward_serial(benchmark::State& state) {
    const int c = static_cast<int>(state.range(0)), p = static_cast<int>(state.range(1));
    Tensor in = random_tensor({c, p, p, p}, 1);
    Tensor w = random_tensor({c, c, 3, 3, 3}, 2);
    Tensor bias = random_tensor({c}, 3);
    for (auto _ : state) {
        Tensor out = nn::serial::conv3d_forward(in, w, bias, 1, 1);
        benchmark::DoNotOptimize(out.data());
    }
}
BENCHMARK(BM_conv3d_forward_serial)->Apply(conv_args);

void BM_conv3d_forward_omp(benchmark::State& state) {
    const int c = static_cast<int>(state.range(0)), p = static_cast<int>(state.range(1));
    Tensor in = random_tensor({c, p, p, p}, 1);
    Tensor w = random_tensor({c, c, 3, 3, 3}, 2);
    Tensor bias = random_tensor({c}, 3);
    for (auto _ : state) {
        Tensor out = nn::conv3d_forward(in, w, bias, 1, 1);
        benchmark::DoNotOptimize(out.data());
    }
}
BENCHMARK(BM_conv3d_forward_omp)->Apply(conv_args);

void BM_conv3d_backward_weight_serial(benchmark::State& state) {
    const int c = static_cast<int>(state.range(0)), p = static_cast<int>(state.range(1));
    Tensor in = random_tensor({c, p, p, p}, 1);
    Tensor gout = random_tensor({c, p, p, p}, 2);
    for (auto _ : state) {
        Tensor gw = nn::serial::conv3d_backward_weight(in, gout, 3, 1, 1);
        benchmark::DoNotOptimize(gw.data());
    }
}
BENCHMARK(BM_conv3d_backward_weight_serial)->Apply(conv_args);

void BM_conv3d_backward_weight_omp(benchmark::State& state) {
    const int c = static_cast<int>(state.range(0)), p = static_cast<int>(state.range(1));
    Tensor in = random_tensor({c, p, p, p}, 1);
    Tensor gout = random_tensor({c, p, p, p}, 2);
    for (auto _ : state) {
        Tensor gw = nn::conv3d_backward_weight(in, gout, 3, 1, 1);
        benchmark::DoNotOptimize(gw.data());
    }
}
BENCHMARK(BM_conv3d_backward_weight_omp)->Apply(conv_args);

// ---- trilinear resampling ---------------------------------------------------

void BM_resample_serial(benchmark::State& state) {
    const int n = static_cast<int>(state.range(0));
    Tensor src = random_tensor({n, n, n}, 4);
    const Index3 out_shape{2 * n, 2 * n, 2 * n};
    const Vec3 scale{0.5, 0.5, 0.5};
    for (auto _ : state) {
        Tensor out = serial::resample_trilinear(src, out_shape, scale);
        benchmark::DoNotOptimize(out.data());
    }
}
BENCHMARK(BM_resample_serial)->Arg(32)->Arg(64)->Unit(benchmark::kMillisecond);

void BM_resample_omp(benchmark::State& state) {
    const int n = static_cast<int>(state.range(0));
    Tensor src = random_tensor({n, n, n}, 4);
    const Index3 out_shape{2 * n, 2 * n, 2 * n};
    const Vec3 scale{0.5, 0.5, 0.5};
    for (auto _ : state) {
        Tensor out = resample_trilinear(src, out_shape, scale);
        benchmark::DoNotOptimize(out.data());
    }
}
BENCHMARK(BM_resample_omp)->Arg(32)->Arg(64)->Unit(benchmark::kMillisecond);

// ---- capsule rasterization ----------------------------------------------------

void BM_rasterize_serial(benchmark::State& state) {
    const int n = static_cast<int>(state.range(0));
    for (auto _ : state) {
        Tensor mask({n, n, n});
        serial::rasterize_capsule(mask, {2.0, 2.0, 2.0},
                                  {n * 0.3, n * 0.3, n * 0.3}, 1.5, 0.35);
        benchmark::DoNotOptimize(mask.data());
    }
}
BENCHMARK(BM_rasterize_serial)->Arg(64)->Unit(benchmark::kMillisecond);

void BM_rasterize_omp(benchmark::State& state) {
    const int n = static_cast<int>(state.range(0));
    for (auto _ : state) {
        Tensor mask({n, n, n});
        rasterize_capsule(mask, {2.0, 2.0, 2.0}, {n * 0.3, n * 0.3, n * 0.3}, 1.5, 0.35);
        benchmark::DoNotOptimize(mask.data());
    }
}
BENCHMARK(BM_rasterize_omp)->Arg(64)->Unit(benchmark::kMillisecond);

// ---- surface distance ----------------------------------------------------------

SurfaceMesh sphere_mesh(int n, double radius_frac, std::uint64_t /*seed*/) {
    Tensor m({n, n, n});
    const double c = (n - 1) / 2.0, r = radius_frac * n;
    for (int d = 0; d < n; ++d)
        for (int h = 0; h < n; ++h)
            for (int w = 0; w < n; ++w)
                if ((d - c) * (d - c) + (h - c) * (h - c) + (w - c) * (w - c) <= r * r)
                    m.at(d, h, w) = 1.0;
    return extract_surface(LabelMask(std::move(m), {0.35, 0.35, 0.35}));
}

void BM_surface_error_bvh(benchmark::State& state) {
    SurfaceMesh a = sphere_mesh(48, 0.32, 1);
    SurfaceMesh b = sphere_mesh(48, 0.36, 2);
    for (auto _ : state) {
        double e = surface_error(a, b);
        benchmark::DoNotOptimize(e);
    }
}
BENCHMARK(BM_surface_error_bvh)->Unit(benchmark::kMillisecond);

void BM_surface_error_bruteforce(benchmark::State& state) {
    SurfaceMesh a = sphere_mesh(24, 0.32, 1);
    SurfaceMesh b = sphere_mesh(24, 0.36, 2);
    for (auto _ : state) {
        double e = serial::surface_error_bruteforce(a, b);
        benchmark::DoNotOptimize(e);
    }
}
BENCHMARK(BM_surface_error_bruteforce)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
