#pragma once

// Neural building blocks above raw tensor ops: linear projection, 2D
// convolution, batch normalization, pooling, parameter initialization.

#include <cstdint>
#include <utility>
#include <vector>

#include "vig/kernels.hpp"
#include "vig/ops.hpp"
#include "vig/rng.hpp"

namespace vig {

// ---------------------------------------------------------------------------
// Initialization
// ---------------------------------------------------------------------------

enum class Init { kTruncNormal, kZeros, kOnes };

template <class T>
Tensor<T> init_params(Shape shape, Init scheme, T stddev, Rng& rng) {
  const std::size_t n = shape_size(shape);
  std::vector<T> v(n);
  switch (scheme) {
    case Init::kZeros:
      break;
    case Init::kOnes:
      v.assign(n, T(1));
      break;
    case Init::kTruncNormal: {
      if (stddev <= T(0)) throw ConfigError("init_params: trunc_normal needs stddev > 0");
      const double s = static_cast<double>(stddev);
      for (std::size_t i = 0; i < n; ++i) {
        double x = rng.normal() * s;
        // clip at two standard deviations
        if (x > 2.0 * s) x = 2.0 * s;
        if (x < -2.0 * s) x = -2.0 * s;
        v[i] = static_cast<T>(x);
      }
      break;
    }
  }
  return Tensor<T>(std::move(shape), std::move(v));
}

template <class T>
Tensor<T> init_params(Shape shape, Init scheme, T stddev, std::uint64_t seed) {
  Rng rng(seed);
  return init_params(std::move(shape), scheme, stddev, rng);
}

// ---------------------------------------------------------------------------
// Linear
// ---------------------------------------------------------------------------

template <class T>
struct LinearLayer {
  Tensor<T> weight;  // [in x out]
  Tensor<T> bias;    // [out]; invalid handle when the layer has no bias

  std::size_t in_dim() const { return weight.dim(0); }
  std::size_t out_dim() const { return weight.dim(1); }

  static LinearLayer create(std::size_t in, std::size_t out, bool with_bias, Rng& rng,
                            T init_std = T(0.02)) {
    LinearLayer l;
    l.weight = init_params<T>({in, out}, Init::kTruncNormal, init_std, rng);
    l.weight.set_requires_grad(true);
    if (with_bias) {
      l.bias = Tensor<T>::zeros({out});
      l.bias.set_requires_grad(true);
    }
    return l;
  }
};

// y = x W (+ b). Leading dims of x are flattened through the product.
template <class T>
Tensor<T> linear_forward(const LinearLayer<T>& layer, const Tensor<T>& x) {
  if (x.rank() == 0 || x.dim(x.rank() - 1) != layer.in_dim()) {
    throw ShapeError("linear_forward: input " + shape_str(x.shape()) + " does not end in " +
                     std::to_string(layer.in_dim()));
  }
  const std::size_t in = layer.in_dim();
  const std::size_t out = layer.out_dim();
  const std::size_t rows = x.size() / in;
  Tensor<T> flat = x.rank() == 2 ? x : reshape(x, {rows, in});
  Tensor<T> y = matmul(flat, layer.weight);
  if (layer.bias.valid()) y = add_bcast(y, layer.bias);
  if (x.rank() != 2) {
    Shape s = x.shape();
    s.back() = out;
    y = reshape(y, std::move(s));
  }
  return y;
}

// ---------------------------------------------------------------------------
// Conv2d (cross-correlation, NCHW)
// ---------------------------------------------------------------------------

template <class T>
struct Conv2dLayer {
  Tensor<T> weight;  // [outC x inC x kH x kW]
  Tensor<T> bias;    // [outC]
  std::size_t stride = 1;
  std::size_t pad = 0;

  std::size_t in_channels() const { return weight.dim(1); }
  std::size_t out_channels() const { return weight.dim(0); }

  static Conv2dLayer create(std::size_t in_c, std::size_t out_c, std::size_t kernel,
                            std::size_t stride, std::size_t pad, Rng& rng,
                            T init_std = T(0.02)) {
    Conv2dLayer l;
    l.weight = init_params<T>({out_c, in_c, kernel, kernel}, Init::kTruncNormal, init_std, rng);
    l.weight.set_requires_grad(true);
    l.bias = Tensor<T>::zeros({out_c});
    l.bias.set_requires_grad(true);
    l.stride = stride;
    l.pad = pad;
    return l;
  }
};

template <class T>
Tensor<T> conv2d_forward(const Conv2dLayer<T>& layer, const Tensor<T>& x) {
  if (x.rank() != 4) {
    throw ShapeError("conv2d_forward: expected [B x C x H x W], got " + shape_str(x.shape()));
  }
  if (x.dim(1) != layer.in_channels()) {
    throw ShapeError("conv2d_forward: input channels " + std::to_string(x.dim(1)) +
                     " != layer channels " + std::to_string(layer.in_channels()));
  }
  kernels::Conv2dShape s;
  s.batch = x.dim(0);
  s.in_c = x.dim(1);
  s.in_h = x.dim(2);
  s.in_w = x.dim(3);
  s.out_c = layer.out_channels();
  s.k_h = layer.weight.dim(2);
  s.k_w = layer.weight.dim(3);
  s.stride = layer.stride;
  s.pad = layer.pad;
  if (s.k_h > s.in_h + 2 * s.pad || s.k_w > s.in_w + 2 * s.pad) {
    throw ShapeError("conv2d_forward: kernel " + std::to_string(s.k_h) + "x" +
                     std::to_string(s.k_w) + " larger than padded input");
  }
  s.out_h = (s.in_h + 2 * s.pad - s.k_h) / s.stride + 1;
  s.out_w = (s.in_w + 2 * s.pad - s.k_w) / s.stride + 1;

  std::vector<T> out(s.batch * s.out_c * s.out_h * s.out_w);
  const T* bias_ptr = layer.bias.valid() ? layer.bias.ptr() : nullptr;
  kernels::conv2d_forward(s, x.ptr(), layer.weight.ptr(), bias_ptr, out.data());

  const bool rg = detail::grad_wanted<T>() &&
                  (x.requires_grad() || layer.weight.requires_grad() ||
                   (layer.bias.valid() && layer.bias.requires_grad()));
  Tensor<T> y = detail::make_result(Shape{s.batch, s.out_c, s.out_h, s.out_w}, std::move(out), rg,
                                    "conv2d");
  if (rg) {
    auto xd = x.impl(), wd = layer.weight.impl(), yd = y.impl();
    auto bd = layer.bias.valid() ? layer.bias.impl() : nullptr;
    Tape<T>::active()->record([s, xd, wd, bd, yd] {
      if (yd->grad.empty()) return;
      const T* gy = yd->grad.data();
      if (xd->requires_grad) {
        auto& gx = detail::ensure_grad(*xd);
        kernels::conv2d_backward_input(s, gy, wd->value.data(), gx.data());
      }
      if (wd->requires_grad) {
        auto& gw = detail::ensure_grad(*wd);
        kernels::conv2d_backward_weight(s, xd->value.data(), gy, gw.data());
      }
      if (bd && bd->requires_grad) {
        auto& gb = detail::ensure_grad(*bd);
        kernels::conv2d_backward_bias(s, gy, gb.data());
      }
    });
  }
  return y;
}

// ---------------------------------------------------------------------------
// BatchNorm2d
// ---------------------------------------------------------------------------

template <class T>
struct BatchNorm2d {
  Tensor<T> gamma, beta;
  Tensor<T> running_mean, running_var;  // buffers, never differentiated
  T momentum = T(0.1);
  T eps = T(1e-5);

  std::size_t channels() const { return gamma.dim(0); }

  static BatchNorm2d create(std::size_t c) {
    BatchNorm2d bn;
    bn.gamma = Tensor<T>::full({c}, T(1));
    bn.gamma.set_requires_grad(true);
    bn.beta = Tensor<T>::zeros({c});
    bn.beta.set_requires_grad(true);
    bn.running_mean = Tensor<T>::zeros({c});
    bn.running_var = Tensor<T>::full({c}, T(1));
    return bn;
  }
};

// Train mode normalizes with batch statistics (and updates the running
// buffers); eval mode depends only on the running statistics.
template <class T>
Tensor<T> batchnorm_forward(BatchNorm2d<T>& bn, const Tensor<T>& x, bool training) {
  if (x.rank() != 4 || x.dim(1) != bn.channels()) {
    throw ShapeError("batchnorm_forward: bad input " + shape_str(x.shape()) + " for C=" +
                     std::to_string(bn.channels()));
  }
  const std::size_t b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t plane = h * w;
  const std::size_t m = b * plane;
  const T* px = x.ptr();

  std::vector<T> mu(c), var(c);
  if (training) {
    for (std::size_t ci = 0; ci < c; ++ci) {
      T s = T(0);
      for (std::size_t bi = 0; bi < b; ++bi) {
        const T* p = px + (bi * c + ci) * plane;
        for (std::size_t i = 0; i < plane; ++i) s += p[i];
      }
      mu[ci] = s / static_cast<T>(m);
      T sq = T(0);
      for (std::size_t bi = 0; bi < b; ++bi) {
        const T* p = px + (bi * c + ci) * plane;
        for (std::size_t i = 0; i < plane; ++i) {
          const T d = p[i] - mu[ci];
          sq += d * d;
        }
      }
      var[ci] = sq / static_cast<T>(m);
    }
    // running buffers track the unbiased variance
    for (std::size_t ci = 0; ci < c; ++ci) {
      const T unbiased = m > 1 ? var[ci] * static_cast<T>(m) / static_cast<T>(m - 1) : var[ci];
      bn.running_mean.data()[ci] =
          (T(1) - bn.momentum) * bn.running_mean.data()[ci] + bn.momentum * mu[ci];
      bn.running_var.data()[ci] =
          (T(1) - bn.momentum) * bn.running_var.data()[ci] + bn.momentum * unbiased;
    }
  } else {
    mu = bn.running_mean.data();
    var = bn.running_var.data();
  }

  std::vector<T> inv_sigma(c);
  for (std::size_t ci = 0; ci < c; ++ci) inv_sigma[ci] = T(1) / std::sqrt(var[ci] + bn.eps);

  std::vector<T> out(x.size());
  const T* pg = bn.gamma.ptr();
  const T* pb = bn.beta.ptr();
  for (std::size_t bi = 0; bi < b; ++bi) {
    for (std::size_t ci = 0; ci < c; ++ci) {
      const T* p = px + (bi * c + ci) * plane;
      T* o = out.data() + (bi * c + ci) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        o[i] = pg[ci] * (p[i] - mu[ci]) * inv_sigma[ci] + pb[ci];
      }
    }
  }

  const bool rg = detail::grad_wanted<T>() &&
                  (x.requires_grad() || bn.gamma.requires_grad() || bn.beta.requires_grad());
  Tensor<T> y = detail::make_result(x.shape(), std::move(out), rg, "batchnorm");
  if (rg) {
    auto xd = x.impl(), gd = bn.gamma.impl(), betad = bn.beta.impl(), yd = y.impl();
    Tape<T>::active()->record([xd, gd, betad, yd, mu, inv_sigma, b, c, plane, m, training] {
      if (yd->grad.empty()) return;
      const std::vector<T>& g = yd->grad;
      const std::vector<T>& xv = xd->value;
      // per-channel reductions of the upstream gradient
      std::vector<T> sum_g(c, T(0)), sum_gx(c, T(0));
      for (std::size_t bi = 0; bi < b; ++bi) {
        for (std::size_t ci = 0; ci < c; ++ci) {
          const std::size_t base = (bi * c + ci) * plane;
          for (std::size_t i = 0; i < plane; ++i) {
            const T xhat = (xv[base + i] - mu[ci]) * inv_sigma[ci];
            sum_g[ci] += g[base + i];
            sum_gx[ci] += g[base + i] * xhat;
          }
        }
      }
      if (gd->requires_grad) {
        auto& gg = detail::ensure_grad(*gd);
        for (std::size_t ci = 0; ci < c; ++ci) gg[ci] += sum_gx[ci];
      }
      if (betad->requires_grad) {
        auto& gb = detail::ensure_grad(*betad);
        for (std::size_t ci = 0; ci < c; ++ci) gb[ci] += sum_g[ci];
      }
      if (xd->requires_grad) {
        auto& gx = detail::ensure_grad(*xd);
        const std::vector<T>& gamma = gd->value;
        const T inv_m = T(1) / static_cast<T>(m);
        for (std::size_t bi = 0; bi < b; ++bi) {
          for (std::size_t ci = 0; ci < c; ++ci) {
            const std::size_t base = (bi * c + ci) * plane;
            for (std::size_t i = 0; i < plane; ++i) {
              if (training) {
                const T xhat = (xv[base + i] - mu[ci]) * inv_sigma[ci];
                gx[base + i] += gamma[ci] * inv_sigma[ci] *
                                (g[base + i] - sum_g[ci] * inv_m - xhat * sum_gx[ci] * inv_m);
              } else {
                gx[base + i] += gamma[ci] * inv_sigma[ci] * g[base + i];
              }
            }
          }
        }
      }
    });
  }
  return y;
}

// ---------------------------------------------------------------------------
// Pooling
// ---------------------------------------------------------------------------

// Feature-wise average over all N nodes: [B x N x D] -> [B x D].
template <class T>
Tensor<T> avgpool_all_nodes(const Tensor<T>& x) {
  return mean_nodes(x);
}

}  // namespace vig
