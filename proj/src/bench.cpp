#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>

#include "phgcn/attention.hpp"
#include "phgcn/harness.hpp"
#include "phgcn/lattice.hpp"
#include "phgcn/parallel.hpp"

namespace phgcn {

namespace {

double time_ms(const std::function<void()>& fn, int reps) {
  using clock = std::chrono::steady_clock;
  double best = std::numeric_limits<double>::infinity();
  for (int r = 0; r < reps; ++r) {
    const auto t0 = clock::now();
    fn();
    const auto t1 = clock::now();
    best = std::min(
        best, std::chrono::duration<double, std::milli>(t1 - t0).count());
  }
  return best;
}

}  // namespace

std::vector<BenchRow> bench_global_aggregation(const std::vector<int64_t>& sizes,
                                               int dim, int channels,
                                               int threads, uint64_t seed) {
  for (size_t i = 1; i < sizes.size(); ++i)
    check(sizes[i] > sizes[i - 1], "bench: sizes must be ascending");
  par::ThreadGuard guard(threads);
  const bool checks_were_on = debug_checks_enabled();
  set_debug_checks(false);

  Rng rng(seed);
  std::vector<BenchRow> rows;
  for (int64_t n : sizes) {
    const int n_clusters = 8;
    ClusteredInstance inst = make_clustered_instance(
        n, dim, channels, n_clusters, /*cluster_std=*/0.1, /*min_sep=*/1.0, rng);
    const double lambda = 10.0;

    BenchRow row;
    row.n = n;
    row.threads = par::threads();  // effective count (PHGCN_THREADS caps it)
    row.lattice_ms = time_ms(
        [&] {
          Tensor out = attention::global_attend_lattice(
              nullptr, inst.positions, inst.features, lambda);
          (void)out;
        },
        3);
    row.exact_ms = time_ms(
        [&] {
          Tensor out = attention::global_attend_exact(
              nullptr, inst.positions, inst.features, lambda);
          (void)out;
        },
        1);
    rows.push_back(row);
  }
  set_debug_checks(checks_were_on);
  return rows;
}

std::string bench_csv(const std::vector<BenchRow>& rows) {
  std::string out = "size,lattice_ms,exact_ms,threads\n";
  char buf[128];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%lld,%.3f,%.3f,%d\n",
                  (long long)r.n, r.lattice_ms, r.exact_ms, r.threads);
    out += buf;
  }
  return out;
}

namespace {

struct FitMetrics {
  double rel_rmse = 0.0;
  double median_cosine = 0.0;
};

FitMetrics evaluate_pair(int dim, double kappa, double cd,
                         const std::vector<ClusteredInstance>& instances,
                         const std::vector<Tensor>& exact_outputs,
                         double lambda) {
  double num = 0.0, den = 0.0;
  std::vector<double> cosines;
  for (size_t t = 0; t < instances.size(); ++t) {
    const ClusteredInstance& inst = instances[t];
    const int64_t n = inst.positions.dim(0);
    const int channels = int(inst.features.dim(1));

    // Homogeneous filtering with an explicit (kappa, cd) pair.
    std::vector<double> homog(size_t(n) * size_t(channels + 1));
    for (int64_t i = 0; i < n; ++i) {
      for (int c = 0; c < channels; ++c)
        homog[size_t(i * (channels + 1) + c)] = inst.features.at(i, c);
      homog[size_t(i * (channels + 1) + channels)] = 1.0;
    }
    lattice::LatticeFilter filter(dim, channels + 1, lambda * cd,
                                  lattice::BlurKernel::exponential(kappa));
    const std::vector<double> filtered =
        filter.forward(n, inst.positions.values(), homog);

    Tensor approx = Tensor::zeros({n, channels});
    for (int64_t i = 0; i < n; ++i) {
      const double d = filtered[size_t(i * (channels + 1) + channels)];
      if (d < 1e-12) return {1e9, -1.0};  // pathological scale
      for (int c = 0; c < channels; ++c)
        approx.at(i, c) = filtered[size_t(i * (channels + 1) + c)] / d;
    }

    const Tensor& exact = exact_outputs[t];
    for (int64_t i = 0; i < n; ++i) {
      for (int c = 0; c < channels; ++c) {
        const double diff = approx.at(i, c) - exact.at(i, c);
        num += diff * diff;
        den += exact.at(i, c) * exact.at(i, c);
      }
    }
    auto cos = rowwise_cosine(approx, exact);
    cosines.insert(cosines.end(), cos.begin(), cos.end());
  }
  FitMetrics m;
  m.rel_rmse = std::sqrt(num / std::max(den, 1e-300));
  m.median_cosine = median(std::move(cosines));
  return m;
}

}  // namespace

CalibrationResult calibrate_lattice(int dim, int trials, uint64_t seed) {
  check(trials >= 1, "calibrate: trials must be >= 1");
  const bool checks_were_on = debug_checks_enabled();
  set_debug_checks(false);
  Rng rng(seed);
  const double lambda = 10.0;
  const int64_t n = 200;
  const int channels = 8;

  std::vector<ClusteredInstance> instances;
  std::vector<Tensor> exact_outputs;
  for (int t = 0; t < trials; ++t) {
    instances.push_back(make_clustered_instance(n, dim, channels, 4, 0.1, 1.0,
                                                rng));
    exact_outputs.push_back(attention::global_attend_exact(
        nullptr, instances.back().positions, instances.back().features,
        lambda));
  }

  CalibrationResult best;
  best.dim = dim;
  best.rel_rmse = std::numeric_limits<double>::infinity();
  for (double kappa = 0.25; kappa <= 3.01; kappa += 0.05) {
    for (double log_cd = std::log(0.05); log_cd <= std::log(20.0);
         log_cd += 0.08) {
      const double cd = std::exp(log_cd);
      const FitMetrics m =
          evaluate_pair(dim, kappa, cd, instances, exact_outputs, lambda);
      if (m.rel_rmse < best.rel_rmse) {
        best.kappa = kappa;
        best.cd = cd;
        best.rel_rmse = m.rel_rmse;
        best.median_cosine = m.median_cosine;
      }
    }
  }
  // Local refinement of cd around the grid optimum.
  for (double f = 0.85; f <= 1.18; f += 0.01) {
    const double cd = best.cd * f;
    const FitMetrics m =
        evaluate_pair(dim, best.kappa, cd, instances, exact_outputs, lambda);
    if (m.rel_rmse < best.rel_rmse) {
      best.cd = cd;
      best.rel_rmse = m.rel_rmse;
      best.median_cosine = m.median_cosine;
    }
  }
  set_debug_checks(checks_were_on);
  return best;
}

}  // namespace phgcn
