#pragma once

// Low-level numeric kernels. Every hot kernel has a serial and an OpenMP
// variant; both use the same per-element accumulation order, so results are
// bitwise identical regardless of thread count. tools/bench_kernels compares
// their throughput, tests/test_kernels asserts the bitwise equivalence.

#include <array>
#include <atomic>
#include <cstddef>
#include <cstdint>
#include <string>

#include "vig/error.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace vig::kernels {

inline std::atomic<bool>& parallel_flag() {
  static std::atomic<bool> flag{true};
  return flag;
}
inline bool parallel_enabled() { return parallel_flag().load(std::memory_order_relaxed); }
inline void set_parallel_enabled(bool on) { parallel_flag().store(on, std::memory_order_relaxed); }

// Work (in multiply-adds) below which the parallel variants are not worth
// the fork/join overhead.
inline constexpr std::size_t kParallelGrain = 1 << 15;

// ---------------------------------------------------------------------------
// Multiply-accumulate counters, bucketed by model stage. Used to validate the
// analytic cost model against what the kernels actually execute.
// ---------------------------------------------------------------------------

enum class MacStage {
  kStem = 0,
  kWIn,
  kKeyQuery,
  kLogits,
  kAggregate,
  kWUpdate,
  kWOut,
  kFfn,
  kHead,
  kOther,
  kCount,
};

inline const char* mac_stage_name(MacStage s) {
  switch (s) {
    case MacStage::kStem: return "stem";
    case MacStage::kWIn: return "w_in";
    case MacStage::kKeyQuery: return "key_query";
    case MacStage::kLogits: return "logits";
    case MacStage::kAggregate: return "aggregate";
    case MacStage::kWUpdate: return "w_update";
    case MacStage::kWOut: return "w_out";
    case MacStage::kFfn: return "ffn";
    case MacStage::kHead: return "head";
    default: return "other";
  }
}

struct MacCounters {
  std::atomic<bool> enabled{false};
  std::array<std::atomic<std::uint64_t>, static_cast<std::size_t>(MacStage::kCount)> macs{};

  void reset() {
    for (auto& m : macs) m.store(0, std::memory_order_relaxed);
  }
  std::uint64_t get(MacStage s) const {
    return macs[static_cast<std::size_t>(s)].load(std::memory_order_relaxed);
  }
  std::uint64_t total() const {
    std::uint64_t t = 0;
    for (auto& m : macs) t += m.load(std::memory_order_relaxed);
    return t;
  }
};

inline MacCounters& mac_counters() {
  static MacCounters counters;
  return counters;
}

inline MacStage& current_mac_stage() {
  thread_local MacStage stage = MacStage::kOther;
  return stage;
}

inline void count_macs(std::uint64_t n) {
  MacCounters& c = mac_counters();
  if (c.enabled.load(std::memory_order_relaxed)) {
    c.macs[static_cast<std::size_t>(current_mac_stage())].fetch_add(n, std::memory_order_relaxed);
  }
}

// Scopes the MAC-stage attribution for kernel calls made underneath.
class MacStageScope {
 public:
  explicit MacStageScope(MacStage s) : prev_(current_mac_stage()) { current_mac_stage() = s; }
  ~MacStageScope() { current_mac_stage() = prev_; }
  MacStageScope(const MacStageScope&) = delete;
  MacStageScope& operator=(const MacStageScope&) = delete;

 private:
  MacStage prev_;
};

// ---------------------------------------------------------------------------
// GEMM. Row-major. c[m x n] (+)= op(a) * op(b).
//   ta == None: a is m x k, else a is k x m.
//   tb == None: b is k x n, else b is n x k.
// ---------------------------------------------------------------------------

enum class Trans { kNone, kTrans };

namespace detail {

template <class T>
inline void gemm_rows(std::size_t i0, std::size_t i1, Trans ta, Trans tb, std::size_t m,
                      std::size_t n, std::size_t k, const T* a, const T* b, T* c,
                      bool accumulate) {
  (void)m;
  if (ta == Trans::kNone && tb == Trans::kNone) {
    for (std::size_t i = i0; i < i1; ++i) {
      T* crow = c + i * n;
      if (!accumulate) {
        for (std::size_t j = 0; j < n; ++j) crow[j] = T(0);
      }
      const T* arow = a + i * k;
      for (std::size_t p = 0; p < k; ++p) {
        const T av = arow[p];
        const T* brow = b + p * n;
        for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
      }
    }
  } else if (ta == Trans::kNone && tb == Trans::kTrans) {
    for (std::size_t i = i0; i < i1; ++i) {
      const T* arow = a + i * k;
      T* crow = c + i * n;
      for (std::size_t j = 0; j < n; ++j) {
        const T* brow = b + j * k;
        T acc = T(0);
        for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
        crow[j] = accumulate ? crow[j] + acc : acc;
      }
    }
  } else if (ta == Trans::kTrans && tb == Trans::kNone) {
    for (std::size_t i = i0; i < i1; ++i) {
      T* crow = c + i * n;
      for (std::size_t j = 0; j < n; ++j) {
        T acc = T(0);
        for (std::size_t p = 0; p < k; ++p) acc += a[p * m + i] * b[p * n + j];
        crow[j] = accumulate ? crow[j] + acc : acc;
      }
    }
  } else {
    throw Error("gemm: double-transpose variant is not used");
  }
}

}  // namespace detail

template <class T>
void gemm_serial(Trans ta, Trans tb, std::size_t m, std::size_t n, std::size_t k, const T* a,
                 const T* b, T* c, bool accumulate) {
  detail::gemm_rows(0, m, ta, tb, m, n, k, a, b, c, accumulate);
}

template <class T>
void gemm_omp(Trans ta, Trans tb, std::size_t m, std::size_t n, std::size_t k, const T* a,
              const T* b, T* c, bool accumulate) {
  const std::int64_t mi = static_cast<std::int64_t>(m);
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < mi; ++i) {
    detail::gemm_rows<T>(static_cast<std::size_t>(i), static_cast<std::size_t>(i) + 1, ta, tb, m,
                         n, k, a, b, c, accumulate);
  }
}

template <class T>
void gemm(Trans ta, Trans tb, std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b,
          T* c, bool accumulate) {
  count_macs(static_cast<std::uint64_t>(m) * n * k);
  if (parallel_enabled() && m * n * k >= kParallelGrain && m > 1) {
    gemm_omp(ta, tb, m, n, k, a, b, c, accumulate);
  } else {
    gemm_serial(ta, tb, m, n, k, a, b, c, accumulate);
  }
}

// ---------------------------------------------------------------------------
// Direct 2D cross-correlation (NCHW layout, OIHW weights).
// ---------------------------------------------------------------------------

struct Conv2dShape {
  std::size_t batch, in_c, in_h, in_w;
  std::size_t out_c, k_h, k_w;
  std::size_t stride, pad;
  std::size_t out_h, out_w;
};

namespace detail {

template <class T>
inline void conv_fwd_one(const Conv2dShape& s, std::size_t b, std::size_t oc, const T* x,
                         const T* w, const T* bias, T* y) {
  const std::size_t in_plane = s.in_h * s.in_w;
  const T* xb = x + b * s.in_c * in_plane;
  const T* wk = w + oc * s.in_c * s.k_h * s.k_w;
  T* yrow = y + (b * s.out_c + oc) * s.out_h * s.out_w;
  for (std::size_t oy = 0; oy < s.out_h; ++oy) {
    for (std::size_t ox = 0; ox < s.out_w; ++ox) {
      T acc = bias ? bias[oc] : T(0);
      for (std::size_t ic = 0; ic < s.in_c; ++ic) {
        const T* xc = xb + ic * in_plane;
        const T* wc = wk + ic * s.k_h * s.k_w;
        for (std::size_t ky = 0; ky < s.k_h; ++ky) {
          const std::int64_t iy =
              static_cast<std::int64_t>(oy * s.stride + ky) - static_cast<std::int64_t>(s.pad);
          if (iy < 0 || iy >= static_cast<std::int64_t>(s.in_h)) continue;
          for (std::size_t kx = 0; kx < s.k_w; ++kx) {
            const std::int64_t ix =
                static_cast<std::int64_t>(ox * s.stride + kx) - static_cast<std::int64_t>(s.pad);
            if (ix < 0 || ix >= static_cast<std::int64_t>(s.in_w)) continue;
            acc += xc[iy * static_cast<std::int64_t>(s.in_w) + ix] * wc[ky * s.k_w + kx];
          }
        }
      }
      yrow[oy * s.out_w + ox] = acc;
    }
  }
}

}  // namespace detail

template <class T>
void conv2d_forward_serial(const Conv2dShape& s, const T* x, const T* w, const T* bias, T* y) {
  for (std::size_t b = 0; b < s.batch; ++b)
    for (std::size_t oc = 0; oc < s.out_c; ++oc) detail::conv_fwd_one(s, b, oc, x, w, bias, y);
}

template <class T>
void conv2d_forward_omp(const Conv2dShape& s, const T* x, const T* w, const T* bias, T* y) {
  const std::int64_t work = static_cast<std::int64_t>(s.batch * s.out_c);
#pragma omp parallel for schedule(static)
  for (std::int64_t t = 0; t < work; ++t) {
    const std::size_t b = static_cast<std::size_t>(t) / s.out_c;
    const std::size_t oc = static_cast<std::size_t>(t) % s.out_c;
    detail::conv_fwd_one(s, b, oc, x, w, bias, y);
  }
}

template <class T>
void conv2d_forward(const Conv2dShape& s, const T* x, const T* w, const T* bias, T* y) {
  const std::uint64_t macs = static_cast<std::uint64_t>(s.batch) * s.out_c * s.out_h * s.out_w *
                             s.in_c * s.k_h * s.k_w;
  count_macs(macs);
  if (parallel_enabled() && macs >= kParallelGrain && s.batch * s.out_c > 1) {
    conv2d_forward_omp(s, x, w, bias, y);
  } else {
    conv2d_forward_serial(s, x, w, bias, y);
  }
}

// Gradient wrt the input, gather form: each thread owns one (b, ic) plane.
template <class T>
void conv2d_backward_input(const Conv2dShape& s, const T* gy, const T* w, T* gx) {
  const std::int64_t work = static_cast<std::int64_t>(s.batch * s.in_c);
  const bool par = parallel_enabled() && work > 1 &&
                   static_cast<std::size_t>(work) * s.in_h * s.in_w * s.out_c >= kParallelGrain;
#pragma omp parallel for schedule(static) if (par)
  for (std::int64_t t = 0; t < work; ++t) {
    const std::size_t b = static_cast<std::size_t>(t) / s.in_c;
    const std::size_t ic = static_cast<std::size_t>(t) % s.in_c;
    T* gplane = gx + (b * s.in_c + ic) * s.in_h * s.in_w;
    for (std::size_t iy = 0; iy < s.in_h; ++iy) {
      for (std::size_t ix = 0; ix < s.in_w; ++ix) {
        T acc = T(0);
        for (std::size_t oc = 0; oc < s.out_c; ++oc) {
          const T* gout = gy + (b * s.out_c + oc) * s.out_h * s.out_w;
          const T* wk = w + (oc * s.in_c + ic) * s.k_h * s.k_w;
          for (std::size_t ky = 0; ky < s.k_h; ++ky) {
            const std::int64_t oy_num = static_cast<std::int64_t>(iy + s.pad) -
                                        static_cast<std::int64_t>(ky);
            if (oy_num < 0 || oy_num % static_cast<std::int64_t>(s.stride) != 0) continue;
            const std::int64_t oy = oy_num / static_cast<std::int64_t>(s.stride);
            if (oy >= static_cast<std::int64_t>(s.out_h)) continue;
            for (std::size_t kx = 0; kx < s.k_w; ++kx) {
              const std::int64_t ox_num = static_cast<std::int64_t>(ix + s.pad) -
                                          static_cast<std::int64_t>(kx);
              if (ox_num < 0 || ox_num % static_cast<std::int64_t>(s.stride) != 0) continue;
              const std::int64_t ox = ox_num / static_cast<std::int64_t>(s.stride);
              if (ox >= static_cast<std::int64_t>(s.out_w)) continue;
              acc += gout[oy * static_cast<std::int64_t>(s.out_w) + ox] * wk[ky * s.k_w + kx];
            }
          }
        }
        gplane[iy * s.in_w + ix] += acc;
      }
    }
  }
}

// Gradient wrt the weights: each thread owns one output channel.
template <class T>
void conv2d_backward_weight(const Conv2dShape& s, const T* x, const T* gy, T* gw) {
  const std::int64_t work = static_cast<std::int64_t>(s.out_c);
  const bool par = parallel_enabled() && work > 1;
#pragma omp parallel for schedule(static) if (par)
  for (std::int64_t oc = 0; oc < work; ++oc) {
    for (std::size_t ic = 0; ic < s.in_c; ++ic) {
      for (std::size_t ky = 0; ky < s.k_h; ++ky) {
        for (std::size_t kx = 0; kx < s.k_w; ++kx) {
          T acc = T(0);
          for (std::size_t b = 0; b < s.batch; ++b) {
            const T* gout = gy + (b * s.out_c + static_cast<std::size_t>(oc)) * s.out_h * s.out_w;
            const T* xc = x + (b * s.in_c + ic) * s.in_h * s.in_w;
            for (std::size_t oy = 0; oy < s.out_h; ++oy) {
              const std::int64_t iy = static_cast<std::int64_t>(oy * s.stride + ky) -
                                      static_cast<std::int64_t>(s.pad);
              if (iy < 0 || iy >= static_cast<std::int64_t>(s.in_h)) continue;
              for (std::size_t ox = 0; ox < s.out_w; ++ox) {
                const std::int64_t ix = static_cast<std::int64_t>(ox * s.stride + kx) -
                                        static_cast<std::int64_t>(s.pad);
                if (ix < 0 || ix >= static_cast<std::int64_t>(s.in_w)) continue;
                acc += xc[iy * static_cast<std::int64_t>(s.in_w) + ix] * gout[oy * s.out_w + ox];
              }
            }
          }
          gw[((static_cast<std::size_t>(oc) * s.in_c + ic) * s.k_h + ky) * s.k_w + kx] += acc;
        }
      }
    }
  }
}

template <class T>
void conv2d_backward_bias(const Conv2dShape& s, const T* gy, T* gb) {
  for (std::size_t oc = 0; oc < s.out_c; ++oc) {
    T acc = T(0);
    for (std::size_t b = 0; b < s.batch; ++b) {
      const T* gout = gy + (b * s.out_c + oc) * s.out_h * s.out_w;
      for (std::size_t p = 0; p < s.out_h * s.out_w; ++p) acc += gout[p];
    }
    gb[oc] += acc;
  }
}

// ---------------------------------------------------------------------------
// Attention-weighted max-relative aggregation.
//   out[b][j][d] = max_i scores[b][i][j] * (x[b][i][d] - x[b][j][d])
// The max runs over all N candidate sources; ties keep the lowest i.
// ---------------------------------------------------------------------------

namespace detail {

template <class T>
inline void aggregate_one_target(std::size_t n, std::size_t d, const T* xb, const T* sb,
                                 std::size_t j, T* out, std::uint32_t* argmax) {
  const T* xj = xb + j * d;
  for (std::size_t f = 0; f < d; ++f) {
    T best = sb[j] * (xb[f] - xj[f]);  // i = 0 candidate: scores[0*n + j]
    std::uint32_t best_i = 0;
    for (std::size_t i = 1; i < n; ++i) {
      const T v = sb[i * n + j] * (xb[i * d + f] - xj[f]);
      if (v > best) {
        best = v;
        best_i = static_cast<std::uint32_t>(i);
      }
    }
    out[j * d + f] = best;
    argmax[j * d + f] = best_i;
  }
}

}  // namespace detail

template <class T>
void aggregate_forward_serial(std::size_t batch, std::size_t n, std::size_t d, const T* x,
                              const T* scores, T* out, std::uint32_t* argmax) {
  for (std::size_t b = 0; b < batch; ++b) {
    const T* xb = x + b * n * d;
    const T* sb = scores + b * n * n;
    for (std::size_t j = 0; j < n; ++j)
      detail::aggregate_one_target(n, d, xb, sb, j, out + b * n * d, argmax + b * n * d);
  }
}

template <class T>
void aggregate_forward_omp(std::size_t batch, std::size_t n, std::size_t d, const T* x,
                           const T* scores, T* out, std::uint32_t* argmax) {
  const std::int64_t work = static_cast<std::int64_t>(batch * n);
#pragma omp parallel for schedule(static)
  for (std::int64_t t = 0; t < work; ++t) {
    const std::size_t b = static_cast<std::size_t>(t) / n;
    const std::size_t j = static_cast<std::size_t>(t) % n;
    detail::aggregate_one_target(n, d, x + b * n * d, scores + b * n * n, j, out + b * n * d,
                                 argmax + b * n * d);
  }
}

template <class T>
void aggregate_forward(std::size_t batch, std::size_t n, std::size_t d, const T* x,
                       const T* scores, T* out, std::uint32_t* argmax) {
  const std::uint64_t macs = static_cast<std::uint64_t>(batch) * n * n * d;
  count_macs(macs);
  if (parallel_enabled() && macs >= kParallelGrain && batch * n > 1) {
    aggregate_forward_omp(batch, n, d, x, scores, out, argmax);
  } else {
    aggregate_forward_serial(batch, n, d, x, scores, out, argmax);
  }
}

// Backward is O(batch*n*d) and runs serial: the scatter through argmax has
// no owner-computes decomposition worth the complexity.
template <class T>
void aggregate_backward(std::size_t batch, std::size_t n, std::size_t d, const T* x,
                        const T* scores, const std::uint32_t* argmax, const T* gout, T* gx,
                        T* gscores) {
  for (std::size_t b = 0; b < batch; ++b) {
    const T* xb = x + b * n * d;
    const T* sb = scores + b * n * n;
    for (std::size_t j = 0; j < n; ++j) {
      for (std::size_t f = 0; f < d; ++f) {
        const T g = gout[(b * n + j) * d + f];
        if (g == T(0)) continue;
        const std::size_t i = argmax[(b * n + j) * d + f];
        const T diff = xb[i * d + f] - xb[j * d + f];
        const T sc = sb[i * n + j];
        if (gscores) gscores[b * n * n + i * n + j] += g * diff;
        if (gx) {
          gx[(b * n + i) * d + f] += g * sc;
          gx[(b * n + j) * d + f] -= g * sc;
        }
      }
    }
  }
}

}  // namespace vig::kernels
