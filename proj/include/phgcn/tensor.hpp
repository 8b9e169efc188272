#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace phgcn {

// Toggle post-op finite checks (on by default). A non-finite op output raises
// instead of propagating NaNs into the training loop.
void set_debug_checks(bool on);
bool debug_checks_enabled();

[[noreturn]] inline void fail(const std::string& msg) {
  throw std::runtime_error(msg);
}

inline void check(bool cond, const char* msg) {
  if (!cond) fail(msg);
}

namespace detail {

struct TensorStorage {
  std::vector<int64_t> shape;
  std::vector<double> values;
  std::vector<double> grad;  // empty until touched
  bool requires_grad = false;
};

}  // namespace detail

// Dense f64 array with an optional gradient slot. Value-semantic handle over
// shared storage; the autodiff tape captures these handles by value.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(std::vector<int64_t> shape, bool requires_grad = false);
  static Tensor full(std::vector<int64_t> shape, double value,
                     bool requires_grad = false);
  static Tensor from_values(std::vector<int64_t> shape,
                            std::vector<double> values,
                            bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return data_ != nullptr; }

  const std::vector<int64_t>& shape() const { return data_->shape; }
  int ndim() const { return int(data_->shape.size()); }
  int64_t dim(int i) const { return data_->shape[size_t(i)]; }
  int64_t numel() const { return int64_t(data_->values.size()); }

  std::span<double> values() { return data_->values; }
  std::span<const double> values() const { return data_->values; }

  // Row-major 2-D accessors.
  double& at(int64_t i, int64_t j) {
    return data_->values[size_t(i * data_->shape[1] + j)];
  }
  double at(int64_t i, int64_t j) const {
    return data_->values[size_t(i * data_->shape[1] + j)];
  }
  double& operator[](int64_t i) { return data_->values[size_t(i)]; }
  double operator[](int64_t i) const { return data_->values[size_t(i)]; }

  bool requires_grad() const { return data_->requires_grad; }
  void set_requires_grad(bool v) { data_->requires_grad = v; }

  bool has_grad() const { return !data_->grad.empty(); }

  // Gradient buffer, zero-allocated on first use.
  std::span<double> grad() {
    if (data_->grad.empty()) data_->grad.assign(data_->values.size(), 0.0);
    return data_->grad;
  }
  std::span<const double> grad_view() const { return data_->grad; }

  void zero_grad() {
    if (!data_->grad.empty()) data_->grad.assign(data_->values.size(), 0.0);
  }
  void drop_grad() { data_->grad.clear(); }

  // Deep copy of values (no grad, same requires_grad flag).
  Tensor clone() const;
  void copy_values_from(const Tensor& other);

  // Identity of the underlying storage (for aliasing checks in tests).
  const void* storage_id() const { return data_.get(); }

  // Raises if any value is non-finite.
  void check_finite(const char* op_name) const;

 private:
  std::shared_ptr<detail::TensorStorage> data_;
};

int64_t numel_of(const std::vector<int64_t>& shape);

}  // namespace phgcn
