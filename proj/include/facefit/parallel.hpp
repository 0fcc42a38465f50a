#pragma once

#include <cstddef>
#include <cstdint>

namespace facefit::parallel {

/// Sets the worker thread count used by the parallel kernels.
/// 0 means "use all hardware threads"; 1 forces the serial paths.
void set_threads(int n);

/// Effective thread count (>= 1).
int threads();

/// True when the OpenMP kernel variants should run.
bool enabled();

/// Runs fn(i) for i in [0, n). The OpenMP variant requires fn to be safe to
/// call concurrently for distinct i; iteration order must not matter for the
/// result (every kernel built on this writes disjoint outputs).
template <class Fn>
void for_each_index(std::int64_t n, Fn&& fn);

namespace detail {
bool omp_active();
}

} // namespace facefit::parallel

#ifdef _OPENMP
#include <omp.h>
#endif

namespace facefit::parallel {

template <class Fn>
void for_each_index(std::int64_t n, Fn&& fn) {
#ifdef _OPENMP
    if (enabled() && n > 1) {
#pragma omp parallel for schedule(static) num_threads(threads())
        for (std::int64_t i = 0; i < n; ++i) fn(i);
        return;
    }
#endif
    for (std::int64_t i = 0; i < n; ++i) fn(i);
}

} // namespace facefit::parallel
