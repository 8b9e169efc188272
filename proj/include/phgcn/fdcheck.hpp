#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <vector>

namespace phgcn::fd {

// Central-difference gradient of a scalar function w.r.t. the entries of x.
// Only forward evaluations are used, so the result is independent of any
// backward implementation it is checked against.
inline std::vector<double> central_gradient(
    const std::function<double()>& scalar_fn, std::span<double> x,
    double h = 1e-5) {
  std::vector<double> grad(x.size());
  for (size_t i = 0; i < x.size(); ++i) {
    const double saved = x[i];
    x[i] = saved + h;
    const double fp = scalar_fn();
    x[i] = saved - h;
    const double fm = scalar_fn();
    x[i] = saved;
    grad[i] = (fp - fm) / (2.0 * h);
  }
  return grad;
}

// Elementwise relative error with an absolute floor so near-zero pairs do not
// blow up; returns the max over all entries.
inline double max_rel_error(std::span<const double> analytic,
                            std::span<const double> numeric,
                            double floor = 1e-6) {
  double worst = 0.0;
  for (size_t i = 0; i < analytic.size(); ++i) {
    const double denom =
        std::max({floor, std::abs(analytic[i]), std::abs(numeric[i])});
    worst = std::max(worst, std::abs(analytic[i] - numeric[i]) / denom);
  }
  return worst;
}

}  // namespace phgcn::fd
