#pragma once

#include <cmath>
#include <cstddef>
#include <memory>
#include <numeric>
#include <string>
#include <vector>

#include "smmix/error.hpp"
#include "smmix/rng.hpp"

namespace smmix {

inline std::string shape_str(const std::vector<int>& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

template <class S>
struct TensorData {
  std::vector<int> shape;
  std::vector<S> value;
  std::vector<S> grad;  // same length as value when requires_grad
  bool requires_grad = false;
};

// Shared handle to a dense row-major array with an optional gradient slot.
// Copying a Tensor aliases the same storage; graphs rely on this identity.
template <class S>
class Tensor {
 public:
  using Scalar = S;

  Tensor() = default;

  explicit Tensor(std::vector<int> shape, bool requires_grad = false)
      : d_(std::make_shared<TensorData<S>>()) {
    for (int dim : shape) {
      if (dim <= 0) throw DimensionError("non-positive dimension in shape " + shape_str(shape));
    }
    d_->shape = std::move(shape);
    d_->value.assign(count(d_->shape), S(0));
    set_requires_grad(requires_grad);
  }

  static Tensor from(std::vector<int> shape, std::vector<S> values, bool requires_grad = false) {
    Tensor t(std::move(shape), requires_grad);
    if (values.size() != t.size())
      throw DimensionError("value count " + std::to_string(values.size()) +
                           " does not match shape " + shape_str(t.shape()));
    t.d_->value = std::move(values);
    return t;
  }

  static Tensor scalar(S v, bool requires_grad = false) {
    return from({1}, {v}, requires_grad);
  }

  static Tensor full(std::vector<int> shape, S v, bool requires_grad = false) {
    Tensor t(std::move(shape), requires_grad);
    std::fill(t.d_->value.begin(), t.d_->value.end(), v);
    return t;
  }

  static Tensor uniform(std::vector<int> shape, Rng& rng, S lo, S hi, bool requires_grad = false) {
    Tensor t(std::move(shape), requires_grad);
    for (auto& v : t.d_->value) v = static_cast<S>(rng.uniform(lo, hi));
    return t;
  }

  static Tensor truncated_normal(std::vector<int> shape, Rng& rng, S stddev,
                                 bool requires_grad = false) {
    Tensor t(std::move(shape), requires_grad);
    for (auto& v : t.d_->value) v = static_cast<S>(rng.truncated_normal(stddev));
    return t;
  }

  bool defined() const { return static_cast<bool>(d_); }
  const std::vector<int>& shape() const { return d_->shape; }
  std::size_t size() const { return d_->value.size(); }
  std::size_t ndim() const { return d_->shape.size(); }

  // 2-D views: rows() = product of leading dims, cols() = last dim.
  int cols() const { return d_->shape.empty() ? 1 : d_->shape.back(); }
  int rows() const { return static_cast<int>(size()) / cols(); }

  std::vector<S>& value() { return d_->value; }
  const std::vector<S>& value() const { return d_->value; }
  std::vector<S>& grad() { return d_->grad; }
  const std::vector<S>& grad() const { return d_->grad; }
  S* data() { return d_->value.data(); }
  const S* data() const { return d_->value.data(); }

  bool requires_grad() const { return d_->requires_grad; }
  void set_requires_grad(bool rg) {
    d_->requires_grad = rg;
    if (rg)
      d_->grad.assign(d_->value.size(), S(0));
    else
      d_->grad.clear();
  }

  void zero_grad() { std::fill(d_->grad.begin(), d_->grad.end(), S(0)); }

  S& at(int i) { return d_->value[static_cast<std::size_t>(i)]; }
  S at(int i) const { return d_->value[static_cast<std::size_t>(i)]; }
  S& at(int r, int c) { return d_->value[static_cast<std::size_t>(r) * cols() + c]; }
  S at(int r, int c) const { return d_->value[static_cast<std::size_t>(r) * cols() + c]; }

  // Identity of storage, not of values.
  bool same_storage(const Tensor& o) const { return d_.get() == o.d_.get(); }
  const void* storage_id() const { return d_.get(); }

  void check_finite(const std::string& name) const {
    for (S v : d_->value)
      if (!std::isfinite(static_cast<double>(v)))
        throw NumericError("non-finite value in tensor '" + name + "'");
  }

  static std::size_t count(const std::vector<int>& shape) {
    std::size_t n = 1;
    for (int dim : shape) n *= static_cast<std::size_t>(dim);
    return n;
  }

 private:
  std::shared_ptr<TensorData<S>> d_;
};

}  // namespace smmix
