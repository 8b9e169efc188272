#pragma once

#include <cstdint>
#include <vector>

#include "phgcn/tensor.hpp"

namespace phgcn {

struct AdamOptions {
  double lr = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam with bias correction. Holds first/second moment buffers per parameter;
// step() applies the update and zeroes the grads.
class Adam {
 public:
  Adam(std::vector<Tensor> params, AdamOptions opts = {});

  void step();

  int64_t step_count() const { return t_; }
  const AdamOptions& options() const { return opts_; }
  void set_lr(double lr) { opts_.lr = lr; }

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  AdamOptions opts_;
  int64_t t_ = 0;
};

}  // namespace phgcn
