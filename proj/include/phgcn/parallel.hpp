#pragma once

namespace phgcn::par {

// Number of threads kernels may use. Respects the PHGCN_THREADS env var as an
// upper bound. All kernels assign each output element to exactly one thread,
// so results are bitwise identical for any thread count.
int threads();

// Clamp the kernel thread count (0 restores the default). Returns the
// previous setting.
int set_threads(int n);

// RAII guard for temporarily pinning the thread count (benchmarks).
class ThreadGuard {
 public:
  explicit ThreadGuard(int n) : prev_(set_threads(n)) {}
  ~ThreadGuard() { set_threads(prev_); }
  ThreadGuard(const ThreadGuard&) = delete;
  ThreadGuard& operator=(const ThreadGuard&) = delete;

 private:
  int prev_;
};

}  // namespace phgcn::par
