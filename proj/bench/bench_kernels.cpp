// Timing harness comparing the serial reference kernels against the OpenMP
// variants, plus an end-to-end render at 1 vs N threads. Not part of ctest.

#include "facefit/dataset.hpp"
#include "facefit/kernels.hpp"
#include "facefit/mm.hpp"
#include "facefit/parallel.hpp"
#include "facefit/pipeline.hpp"
#include "facefit/render.hpp"
#include "facefit/rng.hpp"

#include <chrono>
#include <cstdio>
#include <cstring>
#include <functional>
#include <string>
#include <vector>

using namespace facefit;

namespace {

double time_ms(const std::function<void()>& fn, int reps) {
    fn(); // warm up
    const auto t0 = std::chrono::steady_clock::now();
    for (int i = 0; i < reps; ++i) fn();
    const auto t1 = std::chrono::steady_clock::now();
    return std::chrono::duration<double, std::milli>(t1 - t0).count() / reps;
}

void report(const char* name, double serial_ms, double parallel_ms) {
    std::printf("%-28s serial %9.3f ms   openmp %9.3f ms   speedup %5.2fx\n", name, serial_ms,
                parallel_ms, parallel_ms > 0 ? serial_ms / parallel_ms : 0.0);
}

} // namespace

int main(int argc, char** argv) {
    int n = 1 << 20;
    int reps = 20;
    for (int i = 1; i < argc; ++i) {
        if (std::strcmp(argv[i], "--n") == 0 && i + 1 < argc) n = std::atoi(argv[++i]);
        if (std::strcmp(argv[i], "--reps") == 0 && i + 1 < argc) reps = std::atoi(argv[++i]);
    }
    std::printf("threads available: %d\n", parallel::threads());

    Rng rng(7);
    std::vector<double> a(n), b(n);
    for (int i = 0; i < n; ++i) {
        a[i] = rng.uniform();
        b[i] = rng.uniform();
    }

    volatile double sink = 0.0;
    report("dot",
           time_ms([&] { sink = kernels::dot_serial(a, b); }, reps),
           time_ms([&] { sink = kernels::dot_parallel(a, b); }, reps));

    std::vector<double> y(n, 0.0);
    report("add_scaled",
           time_ms([&] { kernels::add_scaled_serial(y, 0.5, a); }, reps),
           time_ms([&] { kernels::add_scaled_parallel(y, 0.5, a); }, reps));

    const MorphableBasis basis = generate_synthetic_basis(2000, 7);
    const std::size_t n3 = 3 * basis.vertex_count;
    std::vector<double> out(n3);
    std::vector<double> coeffs(coeff::kShapeSize + coeff::kExprSize);
    for (double& c : coeffs) c = rng.normal(0.0, 0.3);
    report("morph (affine_rows)",
           time_ms([&] {
               kernels::affine_rows_serial(out, basis.mean_geometry, basis.geometry_rows,
                                           coeffs.size(), coeffs);
           }, reps),
           time_ms([&] {
               kernels::affine_rows_parallel(out, basis.mean_geometry, basis.geometry_rows,
                                             coeffs.size(), coeffs);
           }, reps));

    Camera camera{128.0, 64.0, 64.0, 128, 128};
    CoeffVector cv = initial_coefficients();
    Image target(128, 128, 0.25);
    const RenderedFrame frame = render_face(basis, cv, camera, &target);
    std::size_t covered = 0;
    report("photometric reduction",
           time_ms([&] {
               sink = kernels::masked_mean_distance_serial(frame.rgb.data, target.data,
                                                           frame.coverage, &covered);
           }, reps),
           time_ms([&] {
               sink = kernels::masked_mean_distance_parallel(frame.rgb.data, target.data,
                                                             frame.coverage, &covered);
           }, reps));

    const int saved = parallel::threads();
    parallel::set_threads(1);
    const double render_serial =
        time_ms([&] { (void)render_face(basis, cv, camera, &target); }, reps);
    parallel::set_threads(0);
    const double render_parallel =
        time_ms([&] { (void)render_face(basis, cv, camera, &target); }, reps);
    report("render_face (end to end)", render_serial, render_parallel);

    NoiseSpec noise{NoiseKind::kGaussian, 0.1, 0.05, 7};
    parallel::set_threads(1);
    const double noise_serial = time_ms([&] { (void)add_noise(target, noise); }, reps);
    parallel::set_threads(0);
    const double noise_parallel = time_ms([&] { (void)add_noise(target, noise); }, reps);
    report("add_noise (gaussian)", noise_serial, noise_parallel);

    parallel::set_threads(saved);
    (void)sink;
    return 0;
}
