#pragma once

// Dataset ingestion and augmentation: the CIFAR-10 binary format, a
// synthetic quadrant-blob task for fast verification training, and the
// in-scope augmentations (mixup, horizontal flip, pad-and-crop).

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "vig/rng.hpp"
#include "vig/tensor.hpp"

namespace vig {

struct Dataset {
  Tensor<float> images;     // [M x 3 x H x W]
  std::vector<int> labels;  // in [0, num_classes)
  std::string split;

  std::size_t size() const { return labels.size(); }
  std::size_t height() const { return images.dim(2); }
  std::size_t width() const { return images.dim(3); }
};

struct ChannelStats {
  std::array<float, 3> mean{};
  std::array<float, 3> stddev{};
};

// One CIFAR-10 batch file: records of 3073 bytes (label byte + 32x32 R,G,B
// planes). Pixels are mapped to [0,1]; normalization is applied separately.
// The standard batch files carry exactly `expected_records` records.
Dataset read_cifar_batch(const std::string& path, std::size_t expected_records,
                         const std::string& split);

// Loads data_batch_1..5.bin and test_batch.bin from dir. Channel statistics
// are computed once from the training split and applied to both splits.
std::pair<Dataset, Dataset> load_cifar10(const std::string& dir, ChannelStats* stats_out = nullptr);

// Computes per-channel mean/stddev over a dataset and normalizes in place.
ChannelStats normalize_per_channel(Dataset& ds);
void apply_normalization(Dataset& ds, const ChannelStats& stats);

// Synthetic 4-class task: one bright Gaussian blob in a uniformly chosen
// quadrant over a noise floor; the label is the quadrant index
// (0 = top-left, 1 = top-right, 2 = bottom-left, 3 = bottom-right).
Dataset synthetic_quadrant(std::size_t n, std::size_t size, std::uint64_t seed);

inline constexpr int kQuadrantClasses = 4;

struct AugmentConfig {
  double mixup_prob = 0.8;
  double mixup_alpha = 0.8;
  bool flip = true;
  int crop_pad = 2;
};

// Deterministic mixing with a given lambda and partner permutation:
// mixed = lam * x + (1 - lam) * x[perm].
std::pair<Tensor<float>, Tensor<float>> mixup_with_lambda(const Tensor<float>& x,
                                                          const Tensor<float>& y_onehot,
                                                          float lam,
                                                          const std::vector<std::size_t>& perm);

// With probability prob: lambda ~ Beta(alpha, alpha) and a random partner
// permutation; otherwise identity.
std::pair<Tensor<float>, Tensor<float>> mixup(const Tensor<float>& x,
                                              const Tensor<float>& y_onehot, double alpha,
                                              double prob, Rng& rng);

// Per-sample horizontal flip (p = 0.5) and zero-pad-then-random-crop.
Tensor<float> augment_flip_crop(const Tensor<float>& images, bool flip, int crop_pad, Rng& rng);

// Batch assembly: gathers rows and builds one-hot targets.
struct Batch {
  Tensor<float> images;   // [B x 3 x H x W]
  Tensor<float> targets;  // [B x C] one-hot (possibly soft after mixup)
  std::vector<int> labels;
};
Batch make_batch(const Dataset& ds, const std::vector<std::size_t>& indices,
                 std::size_t num_classes);

}  // namespace vig
