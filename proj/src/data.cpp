#include "vig/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "vig/error.hpp"

namespace vig {

namespace {

constexpr std::size_t kCifarDim = 32;
constexpr std::size_t kCifarPixels = kCifarDim * kCifarDim;
constexpr std::size_t kCifarRecordBytes = 1 + 3 * kCifarPixels;  // 3073

}  // namespace

Dataset read_cifar_batch(const std::string& path, std::size_t expected_records,
                         const std::string& split) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cifar: cannot open " + path);
  f.seekg(0, std::ios::end);
  const std::uint64_t bytes = static_cast<std::uint64_t>(f.tellg());
  f.seekg(0, std::ios::beg);
  if (bytes % kCifarRecordBytes != 0 || bytes / kCifarRecordBytes != expected_records) {
    throw DataError("cifar: " + path + " holds " + std::to_string(bytes) + " bytes, expected " +
                    std::to_string(expected_records * kCifarRecordBytes) + " (" +
                    std::to_string(expected_records) + " records of " +
                    std::to_string(kCifarRecordBytes) + ")");
  }

  Dataset ds;
  ds.split = split;
  ds.labels.reserve(expected_records);
  std::vector<float> pixels(expected_records * 3 * kCifarPixels);
  std::vector<unsigned char> record(kCifarRecordBytes);
  for (std::size_t r = 0; r < expected_records; ++r) {
    f.read(reinterpret_cast<char*>(record.data()), kCifarRecordBytes);
    if (!f) throw DataError("cifar: short read in " + path);
    if (record[0] > 9) {
      throw DataError("cifar: record " + std::to_string(r) + " in " + path +
                      " has label byte " + std::to_string(record[0]) + " > 9");
    }
    ds.labels.push_back(static_cast<int>(record[0]));
    float* dst = pixels.data() + r * 3 * kCifarPixels;
    for (std::size_t i = 0; i < 3 * kCifarPixels; ++i) {
      dst[i] = static_cast<float>(record[1 + i]) / 255.0f;
    }
  }
  ds.images = Tensor<float>({expected_records, 3, kCifarDim, kCifarDim}, std::move(pixels));
  return ds;
}

namespace {

Dataset concat_datasets(std::vector<Dataset> parts) {
  std::size_t total = 0;
  for (const auto& p : parts) total += p.size();
  const std::size_t per = 3 * kCifarPixels;
  std::vector<float> pixels(total * per);
  Dataset out;
  out.split = parts.front().split;
  out.labels.reserve(total);
  std::size_t off = 0;
  for (auto& p : parts) {
    std::copy(p.images.data().begin(), p.images.data().end(), pixels.begin() + off * per);
    out.labels.insert(out.labels.end(), p.labels.begin(), p.labels.end());
    off += p.size();
  }
  out.images = Tensor<float>({total, 3, kCifarDim, kCifarDim}, std::move(pixels));
  return out;
}

}  // namespace

ChannelStats normalize_per_channel(Dataset& ds) {
  const std::size_t m = ds.size();
  const std::size_t plane = ds.height() * ds.width();
  ChannelStats st;
  float* p = ds.images.ptr();
  for (std::size_t c = 0; c < 3; ++c) {
    double sum = 0.0, sq = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      const float* ch = p + (i * 3 + c) * plane;
      for (std::size_t k = 0; k < plane; ++k) {
        sum += ch[k];
        sq += static_cast<double>(ch[k]) * ch[k];
      }
    }
    const double n = static_cast<double>(m * plane);
    const double mean = sum / n;
    const double var = sq / n - mean * mean;
    st.mean[c] = static_cast<float>(mean);
    st.stddev[c] = static_cast<float>(std::sqrt(std::max(var, 1e-12)));
  }
  apply_normalization(ds, st);
  return st;
}

void apply_normalization(Dataset& ds, const ChannelStats& st) {
  const std::size_t m = ds.size();
  const std::size_t plane = ds.height() * ds.width();
  float* p = ds.images.ptr();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t c = 0; c < 3; ++c) {
      float* ch = p + (i * 3 + c) * plane;
      for (std::size_t k = 0; k < plane; ++k) ch[k] = (ch[k] - st.mean[c]) / st.stddev[c];
    }
  }
}

std::pair<Dataset, Dataset> load_cifar10(const std::string& dir, ChannelStats* stats_out) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw DataError("cifar: " + dir + " is not a directory");
  std::vector<Dataset> parts;
  for (int i = 1; i <= 5; ++i) {
    const std::string path = dir + "/data_batch_" + std::to_string(i) + ".bin";
    if (!fs::exists(path)) throw DataError("cifar: missing file " + path);
    parts.push_back(read_cifar_batch(path, 10000, "train"));
  }
  Dataset train = concat_datasets(std::move(parts));
  const std::string test_path = dir + "/test_batch.bin";
  if (!fs::exists(test_path)) throw DataError("cifar: missing file " + test_path);
  Dataset test = read_cifar_batch(test_path, 10000, "test");

  // normalization constants come from the training split only
  ChannelStats st = normalize_per_channel(train);
  apply_normalization(test, st);
  if (stats_out) *stats_out = st;
  return {std::move(train), std::move(test)};
}

Dataset synthetic_quadrant(std::size_t n, std::size_t size, std::uint64_t seed) {
  if (size % 2 != 0) throw DataError("synthetic_quadrant: size must be even");
  Rng rng(seed);
  const std::size_t plane = size * size;
  std::vector<float> pixels(n * 3 * plane);
  Dataset ds;
  ds.split = "synthetic";
  ds.labels.reserve(n);
  const double half = static_cast<double>(size) / 2.0;
  const double blob_sigma = static_cast<double>(size) / 16.0;
  for (std::size_t i = 0; i < n; ++i) {
    const int quadrant = static_cast<int>(rng.uniform_int(4));
    ds.labels.push_back(quadrant);
    // blob center jitters inside the middle of its quadrant
    const double margin = half * 0.25;
    const double qx = (quadrant % 2 == 0) ? 0.0 : half;
    const double qy = (quadrant < 2) ? 0.0 : half;
    const double cx = qx + margin + rng.uniform() * (half - 2.0 * margin);
    const double cy = qy + margin + rng.uniform() * (half - 2.0 * margin);
    for (std::size_t c = 0; c < 3; ++c) {
      const double amp = 2.0 + 0.5 * rng.uniform();
      float* ch = pixels.data() + (i * 3 + c) * plane;
      for (std::size_t y = 0; y < size; ++y) {
        for (std::size_t x = 0; x < size; ++x) {
          const double dx = (static_cast<double>(x) - cx) / blob_sigma;
          const double dy = (static_cast<double>(y) - cy) / blob_sigma;
          const double blob = amp * std::exp(-0.5 * (dx * dx + dy * dy));
          const double noise = 0.3 * rng.normal();
          ch[y * size + x] = static_cast<float>(blob + noise);
        }
      }
    }
  }
  ds.images = Tensor<float>({n, 3, size, size}, std::move(pixels));
  return ds;
}

std::pair<Tensor<float>, Tensor<float>> mixup_with_lambda(const Tensor<float>& x,
                                                          const Tensor<float>& y_onehot,
                                                          float lam,
                                                          const std::vector<std::size_t>& perm) {
  const std::size_t b = x.dim(0);
  if (y_onehot.dim(0) != b || perm.size() != b) {
    throw ShapeError("mixup: batch sizes disagree");
  }
  const std::size_t xs = x.size() / b;
  const std::size_t ys = y_onehot.size() / b;
  std::vector<float> mx(x.size()), my(y_onehot.size());
  const float* px = x.ptr();
  const float* py = y_onehot.ptr();
  for (std::size_t i = 0; i < b; ++i) {
    const std::size_t j = perm[i];
    for (std::size_t k = 0; k < xs; ++k) {
      mx[i * xs + k] = lam * px[i * xs + k] + (1.0f - lam) * px[j * xs + k];
    }
    for (std::size_t k = 0; k < ys; ++k) {
      my[i * ys + k] = lam * py[i * ys + k] + (1.0f - lam) * py[j * ys + k];
    }
  }
  return {Tensor<float>(x.shape(), std::move(mx)), Tensor<float>(y_onehot.shape(), std::move(my))};
}

std::pair<Tensor<float>, Tensor<float>> mixup(const Tensor<float>& x,
                                              const Tensor<float>& y_onehot, double alpha,
                                              double prob, Rng& rng) {
  if (prob < 0.0 || prob > 1.0) throw ConfigError("mixup: prob must be in [0,1]");
  if (alpha <= 0.0) throw ConfigError("mixup: alpha must be > 0");
  if (!rng.bernoulli(prob)) return {x, y_onehot};
  const float lam = static_cast<float>(rng.beta(alpha, alpha));
  std::vector<std::size_t> perm(x.dim(0));
  for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
  rng.shuffle(perm);
  return mixup_with_lambda(x, y_onehot, lam, perm);
}

Tensor<float> augment_flip_crop(const Tensor<float>& images, bool flip, int crop_pad, Rng& rng) {
  if (images.rank() != 4) throw ShapeError("augment: expected [B x C x H x W]");
  if (crop_pad < 0) throw ConfigError("augment: crop_pad must be >= 0");
  const std::size_t b = images.dim(0), c = images.dim(1), h = images.dim(2), w = images.dim(3);
  std::vector<float> out(images.size(), 0.0f);
  const float* src = images.ptr();
  const int pad = crop_pad;
  for (std::size_t i = 0; i < b; ++i) {
    const bool do_flip = flip && rng.bernoulli(0.5);
    int oy = 0, ox = 0;
    if (pad > 0) {
      oy = static_cast<int>(rng.uniform_int(2 * pad + 1)) - pad;
      ox = static_cast<int>(rng.uniform_int(2 * pad + 1)) - pad;
    }
    for (std::size_t ci = 0; ci < c; ++ci) {
      const float* sp = src + (i * c + ci) * h * w;
      float* dp = out.data() + (i * c + ci) * h * w;
      for (std::size_t y = 0; y < h; ++y) {
        const int sy = static_cast<int>(y) + oy;
        if (sy < 0 || sy >= static_cast<int>(h)) continue;  // zero padding
        for (std::size_t x = 0; x < w; ++x) {
          const int sx = static_cast<int>(x) + ox;
          if (sx < 0 || sx >= static_cast<int>(w)) continue;
          const std::size_t src_x = do_flip ? (w - 1 - static_cast<std::size_t>(sx))
                                            : static_cast<std::size_t>(sx);
          dp[y * w + x] = sp[static_cast<std::size_t>(sy) * w + src_x];
        }
      }
    }
  }
  return Tensor<float>(images.shape(), std::move(out));
}

Batch make_batch(const Dataset& ds, const std::vector<std::size_t>& indices,
                 std::size_t num_classes) {
  const std::size_t b = indices.size();
  const std::size_t per = ds.images.size() / ds.size();
  std::vector<float> img(b * per);
  std::vector<float> tgt(b * num_classes, 0.0f);
  Batch batch;
  batch.labels.reserve(b);
  for (std::size_t i = 0; i < b; ++i) {
    const std::size_t src = indices[i];
    if (src >= ds.size()) throw DataError("make_batch: index out of range");
    std::copy(ds.images.data().begin() + src * per, ds.images.data().begin() + (src + 1) * per,
              img.begin() + i * per);
    const int label = ds.labels[src];
    if (label < 0 || static_cast<std::size_t>(label) >= num_classes) {
      throw DataError("make_batch: label " + std::to_string(label) + " outside [0, " +
                      std::to_string(num_classes) + ")");
    }
    tgt[i * num_classes + static_cast<std::size_t>(label)] = 1.0f;
    batch.labels.push_back(label);
  }
  Shape s = ds.images.shape();
  s[0] = b;
  batch.images = Tensor<float>(std::move(s), std::move(img));
  batch.targets = Tensor<float>({b, num_classes}, std::move(tgt));
  return batch;
}

}  // namespace vig
