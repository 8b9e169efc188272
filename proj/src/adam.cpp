#include "phgcn/adam.hpp"

#include <cmath>

namespace phgcn {

Adam::Adam(std::vector<Tensor> params, AdamOptions opts)
    : params_(std::move(params)), opts_(opts) {
  check(opts_.lr >= 0.0, "adam: lr must be nonnegative");
  m_.resize(params_.size());
  v_.resize(params_.size());
  for (size_t i = 0; i < params_.size(); ++i) {
    check(params_[i].requires_grad(), "adam: parameter does not require grad");
    m_[i].assign(size_t(params_[i].numel()), 0.0);
    v_[i].assign(size_t(params_[i].numel()), 0.0);
  }
}

void Adam::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(opts_.beta1, double(t_));
  const double bc2 = 1.0 - std::pow(opts_.beta2, double(t_));
  for (size_t i = 0; i < params_.size(); ++i) {
    Tensor& p = params_[i];
    check(p.has_grad(), "adam: missing grad");
    auto g = p.grad();
    auto vals = p.values();
    auto& m = m_[i];
    auto& v = v_[i];
    for (size_t j = 0; j < m.size(); ++j) {
      m[j] = opts_.beta1 * m[j] + (1.0 - opts_.beta1) * g[j];
      v[j] = opts_.beta2 * v[j] + (1.0 - opts_.beta2) * g[j] * g[j];
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      vals[j] -= opts_.lr * mhat / (std::sqrt(vhat) + opts_.eps);
    }
    p.zero_grad();
  }
}

}  // namespace phgcn
