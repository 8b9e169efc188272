#include "phgcn/tensor.hpp"

#include <atomic>
#include <cmath>

namespace phgcn {

namespace {
std::atomic<bool> g_debug_checks{true};
}

void set_debug_checks(bool on) { g_debug_checks.store(on); }
bool debug_checks_enabled() { return g_debug_checks.load(); }

int64_t numel_of(const std::vector<int64_t>& shape) {
  int64_t n = 1;
  for (int64_t d : shape) {
    check(d >= 0, "tensor dimension must be nonnegative");
    n *= d;
  }
  return n;
}

Tensor Tensor::zeros(std::vector<int64_t> shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(std::vector<int64_t> shape, double value,
                    bool requires_grad) {
  Tensor t;
  t.data_ = std::make_shared<detail::TensorStorage>();
  t.data_->values.assign(size_t(numel_of(shape)), value);
  t.data_->shape = std::move(shape);
  t.data_->requires_grad = requires_grad;
  return t;
}

Tensor Tensor::from_values(std::vector<int64_t> shape,
                           std::vector<double> values, bool requires_grad) {
  check(numel_of(shape) == int64_t(values.size()),
        "tensor shape does not match value count");
  Tensor t;
  t.data_ = std::make_shared<detail::TensorStorage>();
  t.data_->shape = std::move(shape);
  t.data_->values = std::move(values);
  t.data_->requires_grad = requires_grad;
  return t;
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from_values({1}, {value}, requires_grad);
}

Tensor Tensor::clone() const {
  Tensor t;
  t.data_ = std::make_shared<detail::TensorStorage>();
  t.data_->shape = data_->shape;
  t.data_->values = data_->values;
  t.data_->requires_grad = data_->requires_grad;
  return t;
}

void Tensor::copy_values_from(const Tensor& other) {
  check(other.numel() == numel(), "copy_values_from: size mismatch");
  data_->values = other.data_->values;
}

void Tensor::check_finite(const char* op_name) const {
  for (double v : data_->values) {
    if (!std::isfinite(v)) {
      fail(std::string(op_name) + ": non-finite value in output");
    }
  }
}

}  // namespace phgcn
