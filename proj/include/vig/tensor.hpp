#pragma once

#include <atomic>
#include <cmath>
#include <cstddef>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "vig/error.hpp"

namespace vig {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << "]";
  return os.str();
}

// Checked mode: when on, every op scans its output (and tensor construction
// scans the data) and raises NonFiniteError on the first NaN/Inf. Off by
// default; the verification suites switch it on.
inline std::atomic<bool>& nan_check_flag() {
  static std::atomic<bool> flag{false};
  return flag;
}
inline bool nan_checks_enabled() { return nan_check_flag().load(std::memory_order_relaxed); }
inline void set_nan_checks(bool on) { nan_check_flag().store(on, std::memory_order_relaxed); }

namespace detail {

template <class T>
struct TensorData {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  // empty until first touched by backward
  bool requires_grad = false;
};

template <class T>
inline std::vector<T>& ensure_grad(TensorData<T>& t) {
  if (t.grad.empty()) t.grad.assign(t.value.size(), T(0));
  return t.grad;
}

template <class T>
inline void check_finite(const std::vector<T>& v, const char* where) {
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!std::isfinite(static_cast<double>(v[i]))) {
      throw NonFiniteError(std::string(where) + ": non-finite value at flat index " +
                           std::to_string(i));
    }
  }
}

}  // namespace detail

// Dense n-dimensional array with optional gradient tracking. A Tensor is a
// cheap handle: copies share the underlying storage, which is what ties the
// forward graph to the gradients accumulated by the tape.
template <class T>
class Tensor {
 public:
  using Data = detail::TensorData<T>;

  Tensor() = default;

  Tensor(Shape shape, std::vector<T> values) {
    if (shape_size(shape) != values.size()) {
      throw ShapeError("tensor: shape " + shape_str(shape) + " expects " +
                       std::to_string(shape_size(shape)) + " values, got " +
                       std::to_string(values.size()));
    }
    if (nan_checks_enabled()) detail::check_finite(values, "tensor");
    d_ = std::make_shared<Data>();
    d_->shape = std::move(shape);
    d_->value = std::move(values);
  }

  static Tensor zeros(Shape shape) {
    std::size_t n = shape_size(shape);
    return Tensor(std::move(shape), std::vector<T>(n, T(0)));
  }

  static Tensor full(Shape shape, T v) {
    std::size_t n = shape_size(shape);
    return Tensor(std::move(shape), std::vector<T>(n, v));
  }

  static Tensor scalar(T v) { return Tensor(Shape{}, std::vector<T>{v}); }

  bool valid() const { return static_cast<bool>(d_); }
  const Shape& shape() const { return d_->shape; }
  std::size_t rank() const { return d_->shape.size(); }
  std::size_t size() const { return d_->value.size(); }
  std::size_t dim(std::size_t i) const { return d_->shape[i]; }

  std::vector<T>& data() { return d_->value; }
  const std::vector<T>& data() const { return d_->value; }
  T* ptr() { return d_->value.data(); }
  const T* ptr() const { return d_->value.data(); }

  T item() const {
    if (size() != 1) throw ShapeError("item: tensor " + shape_str(shape()) + " is not scalar");
    return d_->value[0];
  }

  bool requires_grad() const { return d_ && d_->requires_grad; }
  Tensor& set_requires_grad(bool b) {
    d_->requires_grad = b;
    return *this;
  }

  bool has_grad() const { return d_ && !d_->grad.empty(); }
  std::vector<T>& grad() { return detail::ensure_grad(*d_); }
  const std::vector<T>& grad_view() const {
    if (!has_grad()) throw Error("grad_view: no gradient has been accumulated");
    return d_->grad;
  }
  void zero_grad() {
    if (d_) d_->grad.clear();
  }

  // Deep copy (storage not shared).
  Tensor clone() const {
    Tensor c(d_->shape, d_->value);
    c.d_->requires_grad = d_->requires_grad;
    return c;
  }

  // Internal: storage handle used by op implementations to wire backward
  // closures. Not part of the stable surface.
  const std::shared_ptr<Data>& impl() const { return d_; }

 private:
  std::shared_ptr<Data> d_;
};

}  // namespace vig
