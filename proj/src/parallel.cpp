#include "phgcn/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace phgcn::par {

namespace {

int env_cap() {
  static const int cap = [] {
    const char* s = std::getenv("PHGCN_THREADS");
    if (!s) return 0;
    int v = std::atoi(s);
    return v > 0 ? v : 0;
  }();
  return cap;
}

std::atomic<int> g_threads{0};

}  // namespace

int threads() {
  int hw = 1;
#ifdef _OPENMP
  hw = omp_get_max_threads();
#endif
  int n = g_threads.load(std::memory_order_relaxed);
  if (n <= 0) n = hw;
  if (env_cap() > 0) n = std::min(n, env_cap());
  return std::max(1, n);
}

int set_threads(int n) {
  return g_threads.exchange(n > 0 ? n : 0, std::memory_order_relaxed);
}

}  // namespace phgcn::par
