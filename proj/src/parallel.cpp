#include "facefit/parallel.hpp"

#include <atomic>
#include <thread>

namespace facefit::parallel {

namespace {
std::atomic<int> g_threads{0}; // 0 = auto
}

void set_threads(int n) { g_threads.store(n < 0 ? 0 : n); }

int threads() {
    int n = g_threads.load();
    if (n == 0) {
        const unsigned hw = std::thread::hardware_concurrency();
        n = hw == 0 ? 1 : static_cast<int>(hw);
    }
    return n < 1 ? 1 : n;
}

bool enabled() {
#ifdef _OPENMP
    return threads() > 1;
#else
    return false;
#endif
}

namespace detail {
bool omp_active() {
#ifdef _OPENMP
    return true;
#else
    return false;
#endif
}
} // namespace detail

} // namespace facefit::parallel
