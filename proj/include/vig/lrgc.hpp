#pragma once

// Learnable reparameterized graph construction: key/query attention scores
// between every pair of nodes, gated by a per-layer learnable threshold.
// scores = tanh(relu(sigmoid(key . query) - sigmoid(tau))); an edge i->j is
// selected exactly when its logit exceeds tau.

#include <cstdint>
#include <utility>
#include <vector>

#include "vig/layers.hpp"
#include "vig/ops.hpp"

namespace vig {

template <class T>
struct LrgcParams {
  Tensor<T> w_key;    // [D x D], no bias
  Tensor<T> w_query;  // [D x D], no bias
  Tensor<T> tau;      // learnable scalar threshold

  std::size_t dim() const { return w_key.dim(0); }

  static LrgcParams create(std::size_t d, Rng& rng, T init_std = T(0.02), T tau_init = T(-1)) {
    LrgcParams p;
    p.w_key = init_params<T>({d, d}, Init::kTruncNormal, init_std, rng);
    p.w_key.set_requires_grad(true);
    p.w_query = init_params<T>({d, d}, Init::kTruncNormal, init_std, rng);
    p.w_query.set_requires_grad(true);
    p.tau = Tensor<T>::scalar(tau_init);
    p.tau.set_requires_grad(true);
    return p;
  }
};

// Entry [i][j] scores the directed edge from node i to node j. Both raw
// logits and gated scores are kept for telemetry.
template <class T>
struct AttentionMatrix {
  Tensor<T> logits;  // [N x N] or [B x N x N]
  Tensor<T> scores;  // same shape, zero = edge not selected
};

namespace detail {

// x [.. x D] * w [D x D], flattening any leading dims.
template <class T>
Tensor<T> project_nodes(const Tensor<T>& x, const Tensor<T>& w, const char* op) {
  if (x.rank() < 2 || x.dim(x.rank() - 1) != w.dim(0)) {
    throw ShapeError(std::string(op) + ": input " + shape_str(x.shape()) +
                     " does not match projection " + shape_str(w.shape()));
  }
  if (x.rank() == 2) return matmul(x, w);
  const std::size_t rows = x.size() / x.dim(x.rank() - 1);
  Tensor<T> flat = reshape(x, {rows, x.dim(x.rank() - 1)});
  return reshape(matmul(flat, w), x.shape());
}

}  // namespace detail

// K = x W_key, Q = x W_query; x is the per-node representation fed to the
// block (the post-W_in features inside a Grapher).
template <class T>
std::pair<Tensor<T>, Tensor<T>> compute_keys_queries(const Tensor<T>& x, const LrgcParams<T>& p) {
  kernels::MacStageScope stage(kernels::MacStage::kKeyQuery);
  Tensor<T> k = detail::project_nodes(x, p.w_key, "compute_keys_queries");
  Tensor<T> q = detail::project_nodes(x, p.w_query, "compute_keys_queries");
  return {k, q};
}

// logits[i][j] = dot(K[i], Q[j]): row = source node, column = target node.
template <class T>
Tensor<T> attention_logits(const Tensor<T>& k, const Tensor<T>& q) {
  kernels::MacStageScope stage(kernels::MacStage::kLogits);
  return matmul_nt(k, q);
}

// scores = tanh(relu(sigmoid(logits) - sigmoid(tau))). Entries with
// logit <= tau come out exactly zero.
template <class T>
Tensor<T> soft_threshold(const Tensor<T>& logits, const Tensor<T>& tau) {
  return tanh(relu(sub_bcast(sigmoid(logits), sigmoid(tau))));
}

template <class T>
AttentionMatrix<T> lrgc_forward(const Tensor<T>& x, const LrgcParams<T>& p) {
  auto [k, q] = compute_keys_queries(x, p);
  AttentionMatrix<T> att;
  att.logits = attention_logits(k, q);
  att.scores = soft_threshold(att.logits, p.tau);
  return att;
}

// ---------------------------------------------------------------------------
// Edge-selection telemetry
// ---------------------------------------------------------------------------

struct EdgeStats {
  double avg_neighbors = 0.0;            // mean in-degree over targets (and batch)
  std::vector<double> degree_per_node;   // per-target in-degree, batch-averaged
};

template <class T>
EdgeStats edge_stats(const Tensor<T>& scores) {
  if (scores.rank() != 2 && scores.rank() != 3) {
    throw ShapeError("edge_stats: expected [N x N] or [B x N x N], got " +
                     shape_str(scores.shape()));
  }
  const std::size_t b = scores.rank() == 3 ? scores.dim(0) : 1;
  const std::size_t n = scores.dim(scores.rank() - 1);
  if (scores.dim(scores.rank() - 2) != n) {
    throw ShapeError("edge_stats: score matrix is not square: " + shape_str(scores.shape()));
  }
  EdgeStats st;
  st.degree_per_node.assign(n, 0.0);
  const T* p = scores.ptr();
  for (std::size_t bi = 0; bi < b; ++bi) {
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        if (p[(bi * n + i) * n + j] > T(0)) st.degree_per_node[j] += 1.0;
      }
    }
  }
  double total = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    st.degree_per_node[j] /= static_cast<double>(b);
    total += st.degree_per_node[j];
  }
  st.avg_neighbors = total / static_cast<double>(n);
  return st;
}

template <class T>
EdgeStats edge_stats(const AttentionMatrix<T>& att) {
  return edge_stats(att.scores);
}

}  // namespace vig
