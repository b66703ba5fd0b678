#pragma once

// Differentiable tensor operations. Each op computes its value eagerly
// through the kernels and, when a tape is active and an input tracks
// gradients, records a backward step that accumulates into input grads.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "vig/kernels.hpp"
#include "vig/tape.hpp"
#include "vig/tensor.hpp"

namespace vig {

namespace detail {

template <class T>
inline bool grad_wanted() {
  return Tape<T>::active() != nullptr;
}

template <class T>
inline Tensor<T> make_result(Shape shape, std::vector<T> value, bool requires_grad,
                             const char* op) {
  if (nan_checks_enabled()) check_finite(value, op);
  Tensor<T> y(std::move(shape), std::move(value));
  y.set_requires_grad(requires_grad);
  return y;
}

template <class T>
inline void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

// b's shape must be a suffix of a's shape (rank-0 b broadcasts everywhere).
template <class T>
inline void require_suffix(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sb.size() > sa.size()) {
    throw ShapeError(std::string(op) + ": " + shape_str(sb) + " does not broadcast over " +
                     shape_str(sa));
  }
  for (std::size_t i = 0; i < sb.size(); ++i) {
    if (sb[sb.size() - 1 - i] != sa[sa.size() - 1 - i]) {
      throw ShapeError(std::string(op) + ": " + shape_str(sb) + " is not a suffix of " +
                       shape_str(sa));
    }
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "add");
  const std::size_t n = a.size();
  std::vector<T> out(n);
  const T* pa = a.ptr();
  const T* pb = b.ptr();
  for (std::size_t i = 0; i < n; ++i) out[i] = pa[i] + pb[i];
  const bool rg = detail::grad_wanted<T>() && (a.requires_grad() || b.requires_grad());
  Tensor<T> y = detail::make_result(a.shape(), std::move(out), rg, "add");
  if (rg) {
    auto ad = a.impl(), bd = b.impl(), yd = y.impl();
    Tape<T>::active()->record([ad, bd, yd] {
      if (yd->grad.empty()) return;
      const std::vector<T>& g = yd->grad;
      if (ad->requires_grad) {
        auto& ga = detail::ensure_grad(*ad);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (bd->requires_grad) {
        auto& gb = detail::ensure_grad(*bd);
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
      }
    });
  }
  return y;
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "sub");
  const std::size_t n = a.size();
  std::vector<T> out(n);
  const T* pa = a.ptr();
  const T* pb = b.ptr();
  for (std::size_t i = 0; i < n; ++i) out[i] = pa[i] - pb[i];
  const bool rg = detail::grad_wanted<T>() && (a.requires_grad() || b.requires_grad());
  Tensor<T> y = detail::make_result(a.shape(), std::move(out), rg, "sub");
  if (rg) {
    auto ad = a.impl(), bd = b.impl(), yd = y.impl();
    Tape<T>::active()->record([ad, bd, yd] {
      if (yd->grad.empty()) return;
      const std::vector<T>& g = yd->grad;
      if (ad->requires_grad) {
        auto& ga = detail::ensure_grad(*ad);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (bd->requires_grad) {
        auto& gb = detail::ensure_grad(*bd);
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
      }
    });
  }
  return y;
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "mul");
  const std::size_t n = a.size();
  std::vector<T> out(n);
  const T* pa = a.ptr();
  const T* pb = b.ptr();
  for (std::size_t i = 0; i < n; ++i) out[i] = pa[i] * pb[i];
  const bool rg = detail::grad_wanted<T>() && (a.requires_grad() || b.requires_grad());
  Tensor<T> y = detail::make_result(a.shape(), std::move(out), rg, "mul");
  if (rg) {
    auto ad = a.impl(), bd = b.impl(), yd = y.impl();
    Tape<T>::active()->record([ad, bd, yd] {
      if (yd->grad.empty()) return;
      const std::vector<T>& g = yd->grad;
      if (ad->requires_grad) {
        auto& ga = detail::ensure_grad(*ad);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bd->value[i];
      }
      if (bd->requires_grad) {
        auto& gb = detail::ensure_grad(*bd);
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * ad->value[i];
      }
    });
  }
  return y;
}

template <class T>
Tensor<T> scale(const Tensor<T>& a, T c) {
  const std::size_t n = a.size();
  std::vector<T> out(n);
  const T* pa = a.ptr();
  for (std::size_t i = 0; i < n; ++i) out[i] = c * pa[i];
  const bool rg = detail::grad_wanted<T>() && a.requires_grad();
  Tensor<T> y = detail::make_result(a.shape(), std::move(out), rg, "scale");
  if (rg) {
    auto ad = a.impl(), yd = y.impl();
    Tape<T>::active()->record([ad, yd, c] {
      if (yd->grad.empty()) return;
      auto& ga = detail::ensure_grad(*ad);
      for (std::size_t i = 0; i < yd->grad.size(); ++i) ga[i] += c * yd->grad[i];
    });
  }
  return y;
}

template <class T>
Tensor<T> neg(const Tensor<T>& a) {
  return scale(a, T(-1));
}

namespace detail {

// Shared body for suffix-broadcast add/sub: out = a + sign * bcast(b).
template <class T>
Tensor<T> bcast_addsub(const Tensor<T>& a, const Tensor<T>& b, T sign, const char* op) {
  require_suffix(a, b, op);
  const std::size_t n = a.size();
  const std::size_t m = b.size();
  std::vector<T> out(n);
  const T* pa = a.ptr();
  const T* pb = b.ptr();
  for (std::size_t i = 0; i < n; ++i) out[i] = pa[i] + sign * pb[i % m];
  const bool rg = grad_wanted<T>() && (a.requires_grad() || b.requires_grad());
  Tensor<T> y = make_result(a.shape(), std::move(out), rg, op);
  if (rg) {
    auto ad = a.impl(), bd = b.impl(), yd = y.impl();
    Tape<T>::active()->record([ad, bd, yd, sign, m] {
      if (yd->grad.empty()) return;
      const std::vector<T>& g = yd->grad;
      if (ad->requires_grad) {
        auto& ga = ensure_grad(*ad);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (bd->requires_grad) {
        auto& gb = ensure_grad(*bd);
        for (std::size_t i = 0; i < g.size(); ++i) gb[i % m] += sign * g[i];
      }
    });
  }
  return y;
}

}  // namespace detail

// a + b where b's shape is a suffix of a's (bias rows, positional tables,
// rank-0 scalars).
template <class T>
Tensor<T> add_bcast(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::bcast_addsub(a, b, T(1), "add_bcast");
}

template <class T>
Tensor<T> sub_bcast(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::bcast_addsub(a, b, T(-1), "sub_bcast");
}

// ---------------------------------------------------------------------------
// Unary nonlinearities
// ---------------------------------------------------------------------------

enum class Unary { kRelu, kGelu, kSigmoid, kTanh };

namespace detail {

template <class T>
inline T sigmoid_scalar(T x) {
  if (x >= T(0)) {
    return T(1) / (T(1) + std::exp(-x));
  }
  const T e = std::exp(x);
  return e / (T(1) + e);
}

inline constexpr double kGeluC0 = 0.7978845608028654;  // sqrt(2/pi)
inline constexpr double kGeluC1 = 0.044715;

template <class T>
inline T gelu_scalar(T x) {
  const T u = T(kGeluC0) * (x + T(kGeluC1) * x * x * x);
  return T(0.5) * x * (T(1) + std::tanh(u));
}

template <class T>
inline T gelu_grad_scalar(T x) {
  const T u = T(kGeluC0) * (x + T(kGeluC1) * x * x * x);
  const T t = std::tanh(u);
  const T du = T(kGeluC0) * (T(1) + T(3) * T(kGeluC1) * x * x);
  return T(0.5) * (T(1) + t) + T(0.5) * x * (T(1) - t * t) * du;
}

}  // namespace detail

template <class T>
Tensor<T> apply_unary(Unary kind, const Tensor<T>& x) {
  const std::size_t n = x.size();
  std::vector<T> out(n);
  const T* px = x.ptr();
  KinkLog* kink = KinkLog::active();
  switch (kind) {
    case Unary::kRelu:
      for (std::size_t i = 0; i < n; ++i) {
        if (kink) kink->log_sign(static_cast<double>(px[i]));
        out[i] = px[i] > T(0) ? px[i] : T(0);
      }
      break;
    case Unary::kGelu:
      for (std::size_t i = 0; i < n; ++i) out[i] = detail::gelu_scalar(px[i]);
      break;
    case Unary::kSigmoid:
      for (std::size_t i = 0; i < n; ++i) out[i] = detail::sigmoid_scalar(px[i]);
      break;
    case Unary::kTanh:
      for (std::size_t i = 0; i < n; ++i) out[i] = std::tanh(px[i]);
      break;
  }
  const bool rg = detail::grad_wanted<T>() && x.requires_grad();
  Tensor<T> y = detail::make_result(x.shape(), std::move(out), rg, "apply_unary");
  if (rg) {
    auto xd = x.impl(), yd = y.impl();
    Tape<T>::active()->record([xd, yd, kind] {
      if (yd->grad.empty()) return;
      const std::vector<T>& g = yd->grad;
      auto& gx = detail::ensure_grad(*xd);
      const std::vector<T>& v = xd->value;
      const std::vector<T>& o = yd->value;
      switch (kind) {
        case Unary::kRelu:
          // Subgradient at 0 is 0: boundary edges stay gradient-dead.
          for (std::size_t i = 0; i < g.size(); ++i) gx[i] += v[i] > T(0) ? g[i] : T(0);
          break;
        case Unary::kGelu:
          for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * detail::gelu_grad_scalar(v[i]);
          break;
        case Unary::kSigmoid:
          for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * o[i] * (T(1) - o[i]);
          break;
        case Unary::kTanh:
          for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * (T(1) - o[i] * o[i]);
          break;
      }
    });
  }
  return y;
}

template <class T>
Tensor<T> relu(const Tensor<T>& x) {
  return apply_unary(Unary::kRelu, x);
}
template <class T>
Tensor<T> gelu(const Tensor<T>& x) {
  return apply_unary(Unary::kGelu, x);
}
template <class T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  return apply_unary(Unary::kSigmoid, x);
}
template <class T>
Tensor<T> tanh(const Tensor<T>& x) {
  return apply_unary(Unary::kTanh, x);
}

// ---------------------------------------------------------------------------
// Matrix products
// ---------------------------------------------------------------------------

// a[m x k] * b[k x n]
template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<T> out(m * n);
  kernels::gemm(kernels::Trans::kNone, kernels::Trans::kNone, m, n, k, a.ptr(), b.ptr(),
                out.data(), false);
  const bool rg = detail::grad_wanted<T>() && (a.requires_grad() || b.requires_grad());
  Tensor<T> y = detail::make_result(Shape{m, n}, std::move(out), rg, "matmul");
  if (rg) {
    auto ad = a.impl(), bd = b.impl(), yd = y.impl();
    Tape<T>::active()->record([ad, bd, yd, m, n, k] {
      if (yd->grad.empty()) return;
      const T* g = yd->grad.data();
      if (ad->requires_grad) {
        auto& ga = detail::ensure_grad(*ad);
        kernels::gemm(kernels::Trans::kNone, kernels::Trans::kTrans, m, k, n, g,
                      bd->value.data(), ga.data(), true);
      }
      if (bd->requires_grad) {
        auto& gb = detail::ensure_grad(*bd);
        kernels::gemm(kernels::Trans::kTrans, kernels::Trans::kNone, k, n, m, ad->value.data(), g,
                      gb.data(), true);
      }
    });
  }
  return y;
}

// a[m x k] * b[n x k]^T; rank-3 inputs are treated as stacked matrices.
template <class T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() == 3 || b.rank() == 3) {
    if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2)) {
      throw ShapeError("matmul_nt: incompatible shapes " + shape_str(a.shape()) + " vs " +
                       shape_str(b.shape()));
    }
    const std::size_t bt = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(1);
    std::vector<T> out(bt * m * n);
    for (std::size_t i = 0; i < bt; ++i) {
      kernels::gemm(kernels::Trans::kNone, kernels::Trans::kTrans, m, n, k, a.ptr() + i * m * k,
                    b.ptr() + i * n * k, out.data() + i * m * n, false);
    }
    const bool rg = detail::grad_wanted<T>() && (a.requires_grad() || b.requires_grad());
    Tensor<T> y = detail::make_result(Shape{bt, m, n}, std::move(out), rg, "matmul_nt");
    if (rg) {
      auto ad = a.impl(), bd = b.impl(), yd = y.impl();
      Tape<T>::active()->record([ad, bd, yd, bt, m, n, k] {
        if (yd->grad.empty()) return;
        for (std::size_t i = 0; i < bt; ++i) {
          const T* g = yd->grad.data() + i * m * n;
          if (ad->requires_grad) {
            auto& ga = detail::ensure_grad(*ad);
            kernels::gemm(kernels::Trans::kNone, kernels::Trans::kNone, m, k, n, g,
                          bd->value.data() + i * n * k, ga.data() + i * m * k, true);
          }
          if (bd->requires_grad) {
            auto& gb = detail::ensure_grad(*bd);
            kernels::gemm(kernels::Trans::kTrans, kernels::Trans::kNone, n, k, m, g,
                          ad->value.data() + i * m * k, gb.data() + i * n * k, true);
          }
        }
      });
    }
    return y;
  }
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(1)) {
    throw ShapeError("matmul_nt: incompatible shapes " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
  std::vector<T> out(m * n);
  kernels::gemm(kernels::Trans::kNone, kernels::Trans::kTrans, m, n, k, a.ptr(), b.ptr(),
                out.data(), false);
  const bool rg = detail::grad_wanted<T>() && (a.requires_grad() || b.requires_grad());
  Tensor<T> y = detail::make_result(Shape{m, n}, std::move(out), rg, "matmul_nt");
  if (rg) {
    auto ad = a.impl(), bd = b.impl(), yd = y.impl();
    Tape<T>::active()->record([ad, bd, yd, m, n, k] {
      if (yd->grad.empty()) return;
      const T* g = yd->grad.data();
      if (ad->requires_grad) {
        auto& ga = detail::ensure_grad(*ad);
        kernels::gemm(kernels::Trans::kNone, kernels::Trans::kNone, m, k, n, g,
                      bd->value.data(), ga.data(), true);
      }
      if (bd->requires_grad) {
        auto& gb = detail::ensure_grad(*bd);
        kernels::gemm(kernels::Trans::kTrans, kernels::Trans::kNone, n, k, m, g,
                      ad->value.data(), gb.data(), true);
      }
    });
  }
  return y;
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> sum(const Tensor<T>& x) {
  T acc = T(0);
  const T* px = x.ptr();
  for (std::size_t i = 0; i < x.size(); ++i) acc += px[i];
  const bool rg = detail::grad_wanted<T>() && x.requires_grad();
  Tensor<T> y = detail::make_result(Shape{}, std::vector<T>{acc}, rg, "sum");
  if (rg) {
    auto xd = x.impl(), yd = y.impl();
    Tape<T>::active()->record([xd, yd] {
      if (yd->grad.empty()) return;
      const T g = yd->grad[0];
      auto& gx = detail::ensure_grad(*xd);
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g;
    });
  }
  return y;
}

template <class T>
Tensor<T> mean(const Tensor<T>& x) {
  return scale(sum(x), T(1) / static_cast<T>(x.size()));
}

template <class T>
struct MaxReduce {
  Tensor<T> values;
  std::vector<std::uint32_t> argmax;  // winning index along the reduced axis
};

// Max along `axis`; ties keep the lowest index and gradient flows only to
// the recorded winner.
template <class T>
MaxReduce<T> reduce_max_axis(const Tensor<T>& x, std::size_t axis) {
  if (axis >= x.rank()) throw ShapeError("reduce_max_axis: axis out of range");
  const std::size_t n = x.dim(axis);
  if (n == 0) throw ShapeError("reduce_max_axis: empty reduction axis");
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= x.dim(i);
  for (std::size_t i = axis + 1; i < x.rank(); ++i) inner *= x.dim(i);
  Shape out_shape;
  for (std::size_t i = 0; i < x.rank(); ++i)
    if (i != axis) out_shape.push_back(x.dim(i));
  std::vector<T> out(outer * inner);
  std::vector<std::uint32_t> arg(outer * inner);
  const T* px = x.ptr();
  KinkLog* kink = KinkLog::active();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      T best = px[o * n * inner + in];
      std::uint32_t bi = 0;
      T second = -std::numeric_limits<T>::infinity();
      for (std::size_t k = 1; k < n; ++k) {
        const T v = px[(o * n + k) * inner + in];
        if (v > best) {
          second = best;
          best = v;
          bi = static_cast<std::uint32_t>(k);
        } else if (v > second) {
          second = v;
        }
      }
      out[o * inner + in] = best;
      arg[o * inner + in] = bi;
      if (kink) {
        const double gap = (n > 1) ? static_cast<double>(best - second)
                                   : std::numeric_limits<double>::infinity();
        kink->log_choice(bi, gap);
      }
    }
  }
  const bool rg = detail::grad_wanted<T>() && x.requires_grad();
  MaxReduce<T> r;
  r.values = detail::make_result(std::move(out_shape), std::move(out), rg, "reduce_max_axis");
  r.argmax = std::move(arg);
  if (rg) {
    auto xd = x.impl(), yd = r.values.impl();
    auto argmax = r.argmax;
    Tape<T>::active()->record([xd, yd, argmax, n, inner] {
      if (yd->grad.empty()) return;
      auto& gx = detail::ensure_grad(*xd);
      const std::vector<T>& g = yd->grad;
      for (std::size_t p = 0; p < g.size(); ++p) {
        const std::size_t o = p / inner;
        const std::size_t in = p % inner;
        gx[(o * n + argmax[p]) * inner + in] += g[p];
      }
    });
  }
  return r;
}

// ---------------------------------------------------------------------------
// Shape plumbing
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (shape_size(shape) != x.size()) {
    throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  }
  const bool rg = detail::grad_wanted<T>() && x.requires_grad();
  Tensor<T> y = detail::make_result(std::move(shape), x.data(), rg, "reshape");
  if (rg) {
    auto xd = x.impl(), yd = y.impl();
    Tape<T>::active()->record([xd, yd] {
      if (yd->grad.empty()) return;
      auto& gx = detail::ensure_grad(*xd);
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += yd->grad[i];
    });
  }
  return y;
}

// Concatenate along the last axis.
template <class T>
Tensor<T> concat_last(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != b.rank() || a.rank() == 0) {
    throw ShapeError("concat_last: rank mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
  for (std::size_t i = 0; i + 1 < a.rank(); ++i) {
    if (a.dim(i) != b.dim(i)) {
      throw ShapeError("concat_last: leading dims differ " + shape_str(a.shape()) + " vs " +
                       shape_str(b.shape()));
    }
  }
  const std::size_t da = a.dim(a.rank() - 1);
  const std::size_t db = b.dim(b.rank() - 1);
  const std::size_t rows = a.size() / da;
  Shape out_shape = a.shape();
  out_shape.back() = da + db;
  std::vector<T> out(rows * (da + db));
  const T* pa = a.ptr();
  const T* pb = b.ptr();
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy(pa + r * da, pa + (r + 1) * da, out.begin() + r * (da + db));
    std::copy(pb + r * db, pb + (r + 1) * db, out.begin() + r * (da + db) + da);
  }
  const bool rg = detail::grad_wanted<T>() && (a.requires_grad() || b.requires_grad());
  Tensor<T> y = detail::make_result(std::move(out_shape), std::move(out), rg, "concat_last");
  if (rg) {
    auto ad = a.impl(), bd = b.impl(), yd = y.impl();
    Tape<T>::active()->record([ad, bd, yd, rows, da, db] {
      if (yd->grad.empty()) return;
      const std::vector<T>& g = yd->grad;
      if (ad->requires_grad) {
        auto& ga = detail::ensure_grad(*ad);
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t i = 0; i < da; ++i) ga[r * da + i] += g[r * (da + db) + i];
      }
      if (bd->requires_grad) {
        auto& gb = detail::ensure_grad(*bd);
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t i = 0; i < db; ++i) gb[r * db + i] += g[r * (da + db) + da + i];
      }
    });
  }
  return y;
}

// Columns [start, start+len) of the last axis.
template <class T>
Tensor<T> slice_last(const Tensor<T>& x, std::size_t start, std::size_t len) {
  if (x.rank() == 0) throw ShapeError("slice_last: scalar input");
  const std::size_t d = x.dim(x.rank() - 1);
  if (start + len > d) throw ShapeError("slice_last: slice out of range");
  const std::size_t rows = x.size() / d;
  Shape out_shape = x.shape();
  out_shape.back() = len;
  std::vector<T> out(rows * len);
  const T* px = x.ptr();
  for (std::size_t r = 0; r < rows; ++r)
    std::copy(px + r * d + start, px + r * d + start + len, out.begin() + r * len);
  const bool rg = detail::grad_wanted<T>() && x.requires_grad();
  Tensor<T> y = detail::make_result(std::move(out_shape), std::move(out), rg, "slice_last");
  if (rg) {
    auto xd = x.impl(), yd = y.impl();
    Tape<T>::active()->record([xd, yd, rows, d, start, len] {
      if (yd->grad.empty()) return;
      auto& gx = detail::ensure_grad(*xd);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t i = 0; i < len; ++i) gx[r * d + start + i] += yd->grad[r * len + i];
    });
  }
  return y;
}

// B x C x H x W feature map -> B x (H*W) x C node matrix.
template <class T>
Tensor<T> nodes_from_nchw(const Tensor<T>& x) {
  if (x.rank() != 4) throw ShapeError("nodes_from_nchw: expected rank-4, got " +
                                      shape_str(x.shape()));
  const std::size_t b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t n = h * w;
  std::vector<T> out(b * n * c);
  const T* px = x.ptr();
  for (std::size_t bi = 0; bi < b; ++bi)
    for (std::size_t ci = 0; ci < c; ++ci)
      for (std::size_t p = 0; p < n; ++p)
        out[(bi * n + p) * c + ci] = px[(bi * c + ci) * n + p];
  const bool rg = detail::grad_wanted<T>() && x.requires_grad();
  Tensor<T> y = detail::make_result(Shape{b, n, c}, std::move(out), rg, "nodes_from_nchw");
  if (rg) {
    auto xd = x.impl(), yd = y.impl();
    Tape<T>::active()->record([xd, yd, b, c, n] {
      if (yd->grad.empty()) return;
      auto& gx = detail::ensure_grad(*xd);
      const std::vector<T>& g = yd->grad;
      for (std::size_t bi = 0; bi < b; ++bi)
        for (std::size_t ci = 0; ci < c; ++ci)
          for (std::size_t p = 0; p < n; ++p)
            gx[(bi * c + ci) * n + p] += g[(bi * n + p) * c + ci];
    });
  }
  return y;
}

// Mean over the node axis: [B x N x D] -> [B x D], or [N x D] -> [D].
template <class T>
Tensor<T> mean_nodes(const Tensor<T>& x) {
  if (x.rank() != 2 && x.rank() != 3) {
    throw ShapeError("mean_nodes: expected rank-2 or rank-3, got " + shape_str(x.shape()));
  }
  const std::size_t b = x.rank() == 3 ? x.dim(0) : 1;
  const std::size_t n = x.rank() == 3 ? x.dim(1) : x.dim(0);
  const std::size_t d = x.dim(x.rank() - 1);
  if (n == 0) throw ShapeError("mean_nodes: no nodes to pool");
  std::vector<T> out(b * d, T(0));
  const T* px = x.ptr();
  for (std::size_t bi = 0; bi < b; ++bi) {
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t f = 0; f < d; ++f) out[bi * d + f] += px[(bi * n + j) * d + f];
    for (std::size_t f = 0; f < d; ++f) out[bi * d + f] /= static_cast<T>(n);
  }
  Shape out_shape = x.rank() == 3 ? Shape{b, d} : Shape{d};
  const bool rg = detail::grad_wanted<T>() && x.requires_grad();
  Tensor<T> y = detail::make_result(std::move(out_shape), std::move(out), rg, "mean_nodes");
  if (rg) {
    auto xd = x.impl(), yd = y.impl();
    Tape<T>::active()->record([xd, yd, b, n, d] {
      if (yd->grad.empty()) return;
      auto& gx = detail::ensure_grad(*xd);
      const std::vector<T>& g = yd->grad;
      const T inv = T(1) / static_cast<T>(n);
      for (std::size_t bi = 0; bi < b; ++bi)
        for (std::size_t j = 0; j < n; ++j)
          for (std::size_t f = 0; f < d; ++f) gx[(bi * n + j) * d + f] += g[bi * d + f] * inv;
    });
  }
  return y;
}

// ---------------------------------------------------------------------------
// Softmax cross-entropy against a soft target distribution, mean over rows.
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> softmax_cross_entropy(const Tensor<T>& logits, const Tensor<T>& targets) {
  detail::require_same_shape(logits, targets, "softmax_cross_entropy");
  if (logits.rank() != 2) {
    throw ShapeError("softmax_cross_entropy: expected [B x C] logits, got " +
                     shape_str(logits.shape()));
  }
  const std::size_t b = logits.dim(0), c = logits.dim(1);
  const T* pl = logits.ptr();
  const T* pt = targets.ptr();
  T loss = T(0);
  for (std::size_t r = 0; r < b; ++r) {
    const T* row = pl + r * c;
    T m = row[0];
    for (std::size_t j = 1; j < c; ++j) m = std::max(m, row[j]);
    T se = T(0);
    for (std::size_t j = 0; j < c; ++j) se += std::exp(row[j] - m);
    const T lse = m + std::log(se);
    T dot = T(0);
    for (std::size_t j = 0; j < c; ++j) dot += pt[r * c + j] * row[j];
    loss += lse - dot;
  }
  loss /= static_cast<T>(b);
  const bool rg =
      detail::grad_wanted<T>() && (logits.requires_grad() || targets.requires_grad());
  Tensor<T> y = detail::make_result(Shape{}, std::vector<T>{loss}, rg, "softmax_cross_entropy");
  if (rg) {
    auto ld = logits.impl(), td = targets.impl(), yd = y.impl();
    Tape<T>::active()->record([ld, td, yd, b, c] {
      if (yd->grad.empty()) return;
      const T g = yd->grad[0] / static_cast<T>(b);
      if (ld->requires_grad) {
        auto& gl = detail::ensure_grad(*ld);
        for (std::size_t r = 0; r < b; ++r) {
          const T* row = ld->value.data() + r * c;
          T m = row[0];
          for (std::size_t j = 1; j < c; ++j) m = std::max(m, row[j]);
          T se = T(0);
          for (std::size_t j = 0; j < c; ++j) se += std::exp(row[j] - m);
          for (std::size_t j = 0; j < c; ++j) {
            const T p = std::exp(row[j] - m) / se;
            gl[r * c + j] += g * (p - td->value[r * c + j]);
          }
        }
      }
      if (td->requires_grad) {
        auto& gt = detail::ensure_grad(*td);
        for (std::size_t i = 0; i < b * c; ++i) gt[i] -= g * ld->value[i];
      }
    });
  }
  return y;
}

}  // namespace vig
