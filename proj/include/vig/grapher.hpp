#pragma once

// The Grapher block: linear projection, LRGC edge selection,
// attention-weighted max-relative aggregation, a 4-head update projection,
// and a residual back to the block input. Plus the two-layer FFN block used
// between Graphers.

#include <array>
#include <cstdint>
#include <utility>
#include <vector>

#include "vig/layers.hpp"
#include "vig/lrgc.hpp"

namespace vig {

inline constexpr std::size_t kUpdateHeads = 4;

template <class T>
struct GrapherParams {
  LinearLayer<T> w_in;                               // D -> D
  LrgcParams<T> lrgc;                                // on the post-w_in features
  std::array<LinearLayer<T>, kUpdateHeads> w_update; // each (2D/4) -> (2D/4)
  LinearLayer<T> w_out;                              // 2D -> D

  std::size_t dim() const { return w_in.in_dim(); }

  static GrapherParams create(std::size_t d, Rng& rng, T init_std = T(0.02)) {
    if ((2 * d) % kUpdateHeads != 0) {
      throw ConfigError("grapher: update heads must divide the concatenated width 2*D");
    }
    GrapherParams p;
    p.w_in = LinearLayer<T>::create(d, d, true, rng, init_std);
    p.lrgc = LrgcParams<T>::create(d, rng, init_std);
    const std::size_t head_w = (2 * d) / kUpdateHeads;
    for (auto& h : p.w_update) h = LinearLayer<T>::create(head_w, head_w, true, rng, init_std);
    p.w_out = LinearLayer<T>::create(2 * d, d, true, rng, init_std);
    return p;
  }
};

template <class T>
struct FfnParams {
  LinearLayer<T> w1;  // D -> 4D
  LinearLayer<T> w2;  // 4D -> D

  static FfnParams create(std::size_t d, Rng& rng, T init_std = T(0.02)) {
    FfnParams p;
    p.w1 = LinearLayer<T>::create(d, 4 * d, true, rng, init_std);
    p.w2 = LinearLayer<T>::create(4 * d, d, true, rng, init_std);
    return p;
  }
};

// x''[j][d] = max over ALL candidate sources i (self and zero-score edges
// included) of scores[i][j] * (x'[i][d] - x'[j][d]). Non-selected edges
// contribute exact zero vectors, so with the self-edge present the result is
// never negative. Ties keep the lowest source index.
template <class T>
Tensor<T> max_relative_aggregate(const Tensor<T>& x_prime, const Tensor<T>& scores) {
  const bool batched = x_prime.rank() == 3;
  if (!batched && x_prime.rank() != 2) {
    throw ShapeError("max_relative_aggregate: expected [N x D] or [B x N x D], got " +
                     shape_str(x_prime.shape()));
  }
  const std::size_t b = batched ? x_prime.dim(0) : 1;
  const std::size_t n = x_prime.dim(batched ? 1 : 0);
  const std::size_t d = x_prime.dim(batched ? 2 : 1);
  Shape want = batched ? Shape{b, n, n} : Shape{n, n};
  if (scores.shape() != want) {
    throw ShapeError("max_relative_aggregate: scores " + shape_str(scores.shape()) +
                     " do not match nodes " + shape_str(x_prime.shape()));
  }

  std::vector<T> out(b * n * d);
  std::vector<std::uint32_t> argmax(b * n * d);
  KinkLog* kink = KinkLog::active();
  if (kink) {
    // slow path recording argmax choices and near-tie proximity
    const T* px = x_prime.ptr();
    const T* ps = scores.ptr();
    for (std::size_t bi = 0; bi < b; ++bi) {
      const T* xb = px + bi * n * d;
      const T* sb = ps + bi * n * n;
      for (std::size_t j = 0; j < n; ++j) {
        for (std::size_t f = 0; f < d; ++f) {
          T best = sb[j] * (xb[f] - xb[j * d + f]);
          T second = -std::numeric_limits<T>::infinity();
          std::uint32_t bi_idx = 0;
          for (std::size_t i = 1; i < n; ++i) {
            const T v = sb[i * n + j] * (xb[i * d + f] - xb[j * d + f]);
            if (v > best) {
              second = best;
              best = v;
              bi_idx = static_cast<std::uint32_t>(i);
            } else if (v > second) {
              second = v;
            }
          }
          out[(bi * n + j) * d + f] = best;
          argmax[(bi * n + j) * d + f] = bi_idx;
          const double gap = (n > 1) ? static_cast<double>(best - second)
                                     : std::numeric_limits<double>::infinity();
          kink->log_choice(bi_idx, gap);
        }
      }
    }
    kernels::count_macs(static_cast<std::uint64_t>(b) * n * n * d);
  } else {
    kernels::MacStageScope stage(kernels::MacStage::kAggregate);
    kernels::aggregate_forward(b, n, d, x_prime.ptr(), scores.ptr(), out.data(), argmax.data());
  }

  const bool rg = detail::grad_wanted<T>() && (x_prime.requires_grad() || scores.requires_grad());
  Tensor<T> y =
      detail::make_result(x_prime.shape(), std::move(out), rg, "max_relative_aggregate");
  if (rg) {
    auto xd = x_prime.impl(), sd = scores.impl(), yd = y.impl();
    auto arg = std::make_shared<std::vector<std::uint32_t>>(std::move(argmax));
    Tape<T>::active()->record([xd, sd, yd, arg, b, n, d] {
      if (yd->grad.empty()) return;
      T* gx = nullptr;
      T* gs = nullptr;
      if (xd->requires_grad) gx = detail::ensure_grad(*xd).data();
      if (sd->requires_grad) gs = detail::ensure_grad(*sd).data();
      kernels::aggregate_backward(b, n, d, xd->value.data(), sd->value.data(), arg->data(),
                                  yd->grad.data(), gx, gs);
    });
  }
  return y;
}

namespace detail {

// Split the concatenated width into contiguous groups, one independent
// linear map per group, concatenated back.
template <class T>
Tensor<T> multihead_update(const Tensor<T>& h,
                           const std::array<LinearLayer<T>, kUpdateHeads>& heads) {
  const std::size_t width = h.dim(h.rank() - 1);
  const std::size_t head_w = width / kUpdateHeads;
  if (head_w * kUpdateHeads != width || heads[0].in_dim() != head_w) {
    throw ShapeError("multihead_update: width " + std::to_string(width) +
                     " does not split into " + std::to_string(kUpdateHeads) + " heads of " +
                     std::to_string(heads[0].in_dim()));
  }
  Tensor<T> out;
  for (std::size_t g = 0; g < kUpdateHeads; ++g) {
    Tensor<T> part = linear_forward(heads[g], slice_last(h, g * head_w, head_w));
    out = g == 0 ? part : concat_last(out, part);
  }
  return out;
}

}  // namespace detail

// Full Grapher block. When att_out is non-null the attention matrix is
// surfaced for telemetry.
template <class T>
Tensor<T> grapher_forward(const Tensor<T>& x, const GrapherParams<T>& p,
                          AttentionMatrix<T>* att_out = nullptr) {
  Tensor<T> x_prime;
  {
    kernels::MacStageScope stage(kernels::MacStage::kWIn);
    x_prime = linear_forward(p.w_in, x);
  }
  AttentionMatrix<T> att = lrgc_forward(x_prime, p.lrgc);
  Tensor<T> aggregated = max_relative_aggregate(x_prime, att.scores);
  Tensor<T> h = concat_last(x_prime, aggregated);
  Tensor<T> updated;
  {
    kernels::MacStageScope stage(kernels::MacStage::kWUpdate);
    updated = detail::multihead_update(h, p.w_update);
  }
  Tensor<T> projected;
  {
    kernels::MacStageScope stage(kernels::MacStage::kWOut);
    projected = linear_forward(p.w_out, gelu(updated));
  }
  if (att_out) *att_out = att;
  return add(projected, x);  // residual to the original block input
}

// Y = GELU(X W1) W2 + X
template <class T>
Tensor<T> ffn_forward(const Tensor<T>& x, const FfnParams<T>& p) {
  kernels::MacStageScope stage(kernels::MacStage::kFfn);
  Tensor<T> h = linear_forward(p.w2, gelu(linear_forward(p.w1, x)));
  return add(h, x);
}

}  // namespace vig
