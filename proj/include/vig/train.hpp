#pragma once

// Optimization: AdamW with decoupled weight decay, cosine schedule with
// linear warmup, label-smoothed cross-entropy, the epoch driver, and the
// per-layer edge-selection telemetry it logs.

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "vig/data.hpp"
#include "vig/model.hpp"
#include "vig/ops.hpp"

namespace vig {

// ---------------------------------------------------------------------------
// AdamW
// ---------------------------------------------------------------------------

template <class T>
struct AdamW {
  T lr = T(1e-3);
  T weight_decay = T(0);
  T beta1 = T(0.9);
  T beta2 = T(0.999);
  T eps = T(1e-8);
  std::size_t t = 0;

  struct Moments {
    std::vector<T> m, v;
  };
  std::vector<Moments> state;

  void init(const std::vector<ParamRef<T>>& params) {
    state.clear();
    for (const auto& p : params) {
      state.push_back({std::vector<T>(p.tensor.size(), T(0)),
                       std::vector<T>(p.tensor.size(), T(0))});
    }
    t = 0;
  }

  // p -= lr * (m_hat / (sqrt(v_hat) + eps) + wd * p); decay is decoupled and
  // skipped entirely for refs with decay == false (tau, pos_embed, norms,
  // biases).
  void step(std::vector<ParamRef<T>>& params) {
    if (state.size() != params.size()) {
      throw Error("adamw: optimizer state does not match parameter list");
    }
    ++t;
    const T bc1 = T(1) - std::pow(beta1, static_cast<T>(t));
    const T bc2 = T(1) - std::pow(beta2, static_cast<T>(t));
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto& p = params[i];
      std::vector<T>& value = p.tensor.data();
      if (!p.tensor.has_grad()) continue;  // parameter unused this step
      const std::vector<T>& g = p.tensor.impl()->grad;
      if (g.size() != value.size()) {
        throw ShapeError("adamw: gradient shape mismatch for " + p.name);
      }
      std::vector<T>& m = state[i].m;
      std::vector<T>& v = state[i].v;
      const T wd = p.decay ? weight_decay : T(0);
      for (std::size_t k = 0; k < value.size(); ++k) {
        m[k] = beta1 * m[k] + (T(1) - beta1) * g[k];
        v[k] = beta2 * v[k] + (T(1) - beta2) * g[k] * g[k];
        const T m_hat = m[k] / bc1;
        const T v_hat = v[k] / bc2;
        value[k] -= lr * (m_hat / (std::sqrt(v_hat) + eps) + wd * value[k]);
      }
    }
  }
};

template <class T>
void adamw_step(std::vector<ParamRef<T>>& params, AdamW<T>& opt) {
  opt.step(params);
}

// ---------------------------------------------------------------------------
// Learning-rate schedule: linear warmup into a cosine decay, clamped at
// min_lr past total_epochs (cooldown holds the floor).
// ---------------------------------------------------------------------------

inline double lr_at(double epoch_frac, double base_lr, double warmup_epochs, double total_epochs,
                    double min_lr) {
  if (epoch_frac < 0.0) throw ConfigError("lr_at: negative epoch");
  if (warmup_epochs > 0.0 && epoch_frac < warmup_epochs) {
    return base_lr * (epoch_frac / warmup_epochs);
  }
  if (epoch_frac >= total_epochs) return min_lr;
  const double progress = (epoch_frac - warmup_epochs) / (total_epochs - warmup_epochs);
  return min_lr + 0.5 * (base_lr - min_lr) * (1.0 + std::cos(M_PI * progress));
}

// ---------------------------------------------------------------------------
// Label-smoothed cross-entropy: (1-eps) on the target plus eps/C elsewhere;
// accepts soft targets (mixup) by linearity. Mean over the batch.
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> smooth_targets(const Tensor<T>& targets, T eps) {
  if (eps < T(0) || eps >= T(1)) throw ConfigError("label smoothing: eps must be in [0,1)");
  const std::size_t c = targets.dim(targets.rank() - 1);
  std::vector<T> out(targets.size());
  const T* p = targets.ptr();
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = (T(1) - eps) * p[i] + eps / static_cast<T>(c);
  }
  return Tensor<T>(targets.shape(), std::move(out));
}

template <class T>
Tensor<T> ce_label_smoothing(const Tensor<T>& logits, const Tensor<T>& soft_targets, T eps) {
  return softmax_cross_entropy(logits, smooth_targets(soft_targets, eps));
}

template <class T>
Tensor<T> ce_label_smoothing(const Tensor<T>& logits, const std::vector<int>& targets, T eps) {
  const std::size_t b = logits.dim(0), c = logits.dim(1);
  if (targets.size() != b) throw ShapeError("ce: batch size mismatch");
  std::vector<T> onehot(b * c, T(0));
  for (std::size_t i = 0; i < b; ++i) {
    if (targets[i] < 0 || static_cast<std::size_t>(targets[i]) >= c) {
      throw DataError("ce: target index " + std::to_string(targets[i]) + " outside [0, " +
                      std::to_string(c) + ")");
    }
    onehot[i * c + static_cast<std::size_t>(targets[i])] = T(1);
  }
  return ce_label_smoothing(logits, Tensor<T>({b, c}, std::move(onehot)), eps);
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

// Per-layer edge-selection telemetry, one row per (epoch, layer).
struct GraphStats {
  int epoch = 0;
  int layer = 0;
  double avg_neighbors = 0.0;
  double tau = 0.0;
};

struct TrainConfig {
  std::size_t epochs = 30;
  std::size_t batch_size = 64;
  double base_lr = 2e-3;
  double min_lr_frac = 0.01;   // min_lr = base_lr * min_lr_frac
  double warmup_epochs = 3.0;
  double cooldown_epochs = 0.0;  // held at min_lr after the cosine span
  double weight_decay = 0.05;
  double label_smoothing = 0.1;
  AugmentConfig augment;
  std::uint64_t seed = 0;
  std::string out_dir;       // empty: keep results in memory only
  std::size_t probe_size = 64;  // fixed batch used for the per-epoch stats
};

struct EpochMetrics {
  double train_loss = 0.0;
  double test_top1 = 0.0;
  double test_top5 = 0.0;  // NaN when num_classes < 5
  double test_loss = 0.0;
};

struct TrainReport {
  std::vector<EpochMetrics> epochs;
  std::vector<GraphStats> stats;  // epoch-major, one row per layer
  std::string csv_text;
  std::string csv_path;        // empty if not written
  std::string checkpoint_path; // empty if not written
};

struct EvalResult {
  double top1 = 0.0;
  double top5 = 0.0;  // NaN when num_classes < 5
  double mean_loss = 0.0;
};

EvalResult evaluate(ModelParams<float>& params, const ModelConfig& cfg, const Dataset& ds,
                    std::size_t batch_size = 64);

// Runs the optimization loop: per epoch, probe-batch graph stats (measured
// before the epoch's updates), batched forward/backward/AdamW with the
// cosine schedule stepped per batch, then a test-split evaluation. Metrics
// CSV rows: epoch,layer,avg_neighbors,tau,train_loss,test_top1.
TrainReport train_loop(ModelParams<float>& params, const ModelConfig& model_cfg,
                       const Dataset& train_ds, const Dataset& test_ds, const TrainConfig& cfg);

}  // namespace vig
