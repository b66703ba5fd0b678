#pragma once

// Full model assembly: stem feature extractor, learnable positional
// embeddings, a backbone of Grapher+FFN blocks, node-wise average pooling,
// and a two-layer classification head.

#include <cstdint>
#include <string>
#include <vector>

#include "vig/grapher.hpp"
#include "vig/layers.hpp"

namespace vig {

struct ConvSpec {
  std::size_t out_channels = 0;
  std::size_t kernel = 3;
  std::size_t stride = 1;
  std::size_t pad = 1;
};

struct ModelConfig {
  std::size_t input_h = 32;
  std::size_t input_w = 32;
  std::size_t input_c = 3;
  std::size_t embed_dim = 32;   // D
  std::size_t num_blocks = 4;   // Grapher+FFN pairs
  std::size_t num_classes = 10;
  std::vector<ConvSpec> stem = {{16, 3, 2, 1}, {24, 3, 2, 1}, {32, 3, 2, 1}};

  std::size_t total_stride() const {
    std::size_t s = 1;
    for (const auto& c : stem) s *= c.stride;
    return s;
  }

  static std::size_t conv_out(std::size_t in, const ConvSpec& c) {
    if (in + 2 * c.pad < c.kernel) {
      throw ConfigError("stem: kernel larger than padded input");
    }
    return (in + 2 * c.pad - c.kernel) / c.stride + 1;
  }

  std::size_t node_h() const {
    std::size_t h = input_h;
    for (const auto& c : stem) h = conv_out(h, c);
    return h;
  }
  std::size_t node_w() const {
    std::size_t w = input_w;
    for (const auto& c : stem) w = conv_out(w, c);
    return w;
  }
  std::size_t num_nodes() const { return node_h() * node_w(); }

  void validate() const {
    if (embed_dim == 0 || num_blocks == 0 || num_classes == 0 || stem.empty()) {
      throw ConfigError("model config: dimensions must be positive");
    }
    if (stem.back().out_channels != embed_dim) {
      throw ConfigError("model config: last stem layer must emit embed_dim channels");
    }
    if ((2 * embed_dim) % kUpdateHeads != 0) {
      throw ConfigError("model config: 2*embed_dim must divide into update heads");
    }
    const std::size_t s = total_stride();
    if (input_h % s != 0 || input_w % s != 0) {
      throw ConfigError("model config: input " + std::to_string(input_h) + "x" +
                        std::to_string(input_w) + " not divisible by stem stride " +
                        std::to_string(s));
    }
    if (node_h() != input_h / s || node_w() != input_w / s) {
      throw ConfigError("model config: stem convs do not realize the declared stride");
    }
  }

  // 32x32 inputs, 16 nodes, D=32, 4 blocks: sized so dense attention and
  // 64-bit gradient checks run in seconds.
  static ModelConfig desk() { return ModelConfig{}; }

  static ModelConfig imagenet() {
    ModelConfig c;
    c.input_h = 224;
    c.input_w = 224;
    c.embed_dim = 192;
    c.num_blocks = 12;
    c.num_classes = 1000;
    c.stem = {{24, 3, 2, 1}, {48, 3, 2, 1}, {96, 3, 2, 1}, {192, 3, 2, 1}, {192, 3, 1, 1}};
    return c;
  }
};

template <class T>
struct ModelParams {
  struct Block {
    GrapherParams<T> grapher;
    FfnParams<T> ffn;
  };

  std::vector<Conv2dLayer<T>> stem_convs;
  std::vector<BatchNorm2d<T>> stem_norms;
  Tensor<T> pos_embed;  // [N x D]
  std::vector<Block> blocks;
  LinearLayer<T> head1;  // D -> D
  LinearLayer<T> head2;  // D -> classes

  static ModelParams init(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Rng rng(seed);
    ModelParams p;
    std::size_t in_c = cfg.input_c;
    for (const auto& cs : cfg.stem) {
      p.stem_convs.push_back(
          Conv2dLayer<T>::create(in_c, cs.out_channels, cs.kernel, cs.stride, cs.pad, rng));
      p.stem_norms.push_back(BatchNorm2d<T>::create(cs.out_channels));
      in_c = cs.out_channels;
    }
    p.pos_embed = init_params<T>({cfg.num_nodes(), cfg.embed_dim}, Init::kTruncNormal, T(0.02),
                                 rng);
    p.pos_embed.set_requires_grad(true);
    for (std::size_t i = 0; i < cfg.num_blocks; ++i) {
      p.blocks.push_back({GrapherParams<T>::create(cfg.embed_dim, rng),
                          FfnParams<T>::create(cfg.embed_dim, rng)});
    }
    p.head1 = LinearLayer<T>::create(cfg.embed_dim, cfg.embed_dim, true, rng);
    p.head2 = LinearLayer<T>::create(cfg.embed_dim, cfg.num_classes, true, rng);
    return p;
  }
};

// ---------------------------------------------------------------------------
// Named parameter registry (optimizer, checkpoints)
// ---------------------------------------------------------------------------

template <class T>
struct ParamRef {
  std::string name;
  Tensor<T> tensor;
  bool decay;  // participates in weight decay
};

namespace detail {

template <class T>
void push_linear(std::vector<ParamRef<T>>& out, const std::string& prefix,
                 const LinearLayer<T>& l) {
  out.push_back({prefix + ".weight", l.weight, true});
  if (l.bias.valid()) out.push_back({prefix + ".bias", l.bias, false});
}

}  // namespace detail

// Weight matrices decay; biases, norm parameters, tau thresholds and the
// positional table do not.
template <class T>
std::vector<ParamRef<T>> named_params(ModelParams<T>& p) {
  std::vector<ParamRef<T>> out;
  for (std::size_t i = 0; i < p.stem_convs.size(); ++i) {
    const std::string s = "stem" + std::to_string(i);
    out.push_back({s + ".conv.weight", p.stem_convs[i].weight, true});
    out.push_back({s + ".conv.bias", p.stem_convs[i].bias, false});
    out.push_back({s + ".bn.gamma", p.stem_norms[i].gamma, false});
    out.push_back({s + ".bn.beta", p.stem_norms[i].beta, false});
  }
  out.push_back({"pos_embed", p.pos_embed, false});
  for (std::size_t i = 0; i < p.blocks.size(); ++i) {
    const std::string b = "block" + std::to_string(i);
    auto& g = p.blocks[i].grapher;
    detail::push_linear(out, b + ".grapher.w_in", g.w_in);
    out.push_back({b + ".grapher.lrgc.w_key", g.lrgc.w_key, true});
    out.push_back({b + ".grapher.lrgc.w_query", g.lrgc.w_query, true});
    out.push_back({b + ".grapher.lrgc.tau", g.lrgc.tau, false});
    for (std::size_t h = 0; h < kUpdateHeads; ++h) {
      detail::push_linear(out, b + ".grapher.w_update" + std::to_string(h), g.w_update[h]);
    }
    detail::push_linear(out, b + ".grapher.w_out", g.w_out);
    detail::push_linear(out, b + ".ffn.w1", p.blocks[i].ffn.w1);
    detail::push_linear(out, b + ".ffn.w2", p.blocks[i].ffn.w2);
  }
  detail::push_linear(out, "head1", p.head1);
  detail::push_linear(out, "head2", p.head2);
  return out;
}

// Non-trainable state that still belongs in a checkpoint.
template <class T>
std::vector<ParamRef<T>> named_buffers(ModelParams<T>& p) {
  std::vector<ParamRef<T>> out;
  for (std::size_t i = 0; i < p.stem_norms.size(); ++i) {
    const std::string s = "stem" + std::to_string(i);
    out.push_back({s + ".bn.running_mean", p.stem_norms[i].running_mean, false});
    out.push_back({s + ".bn.running_var", p.stem_norms[i].running_var, false});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Forward passes
// ---------------------------------------------------------------------------

// Conv stack then flatten the spatial grid: [B x C x H x W] -> [B x N x D].
template <class T>
Tensor<T> stem_forward(const Tensor<T>& image, ModelParams<T>& p, const ModelConfig& cfg,
                       bool training) {
  if (image.rank() != 4 || image.dim(1) != cfg.input_c || image.dim(2) != cfg.input_h ||
      image.dim(3) != cfg.input_w) {
    throw ShapeError("stem_forward: input " + shape_str(image.shape()) +
                     " does not match configured " + std::to_string(cfg.input_c) + "x" +
                     std::to_string(cfg.input_h) + "x" + std::to_string(cfg.input_w));
  }
  kernels::MacStageScope stage(kernels::MacStage::kStem);
  Tensor<T> x = image;
  for (std::size_t i = 0; i < p.stem_convs.size(); ++i) {
    x = conv2d_forward(p.stem_convs[i], x);
    x = batchnorm_forward(p.stem_norms[i], x, training);
    x = gelu(x);
  }
  return nodes_from_nchw(x);
}

// Backbone from node features: positional embedding, Grapher/FFN blocks,
// pooling, classification head. Fills `atts` with one attention matrix per
// Grapher when provided.
template <class T>
Tensor<T> backbone_forward(const Tensor<T>& nodes, ModelParams<T>& p, const ModelConfig& cfg,
                           std::vector<AttentionMatrix<T>>* atts = nullptr) {
  (void)cfg;
  Tensor<T> x = add_bcast(nodes, p.pos_embed);
  for (auto& block : p.blocks) {
    if (atts) {
      AttentionMatrix<T> att;
      x = grapher_forward(x, block.grapher, &att);
      atts->push_back(att);
    } else {
      x = grapher_forward(x, block.grapher);
    }
    x = ffn_forward(x, block.ffn);
  }
  Tensor<T> pooled = avgpool_all_nodes(x);
  kernels::MacStageScope stage(kernels::MacStage::kHead);
  return linear_forward(p.head2, gelu(linear_forward(p.head1, pooled)));
}

template <class T>
Tensor<T> model_forward(const Tensor<T>& image, ModelParams<T>& p, const ModelConfig& cfg,
                        bool training, std::vector<AttentionMatrix<T>>* atts = nullptr) {
  Tensor<T> nodes = stem_forward(image, p, cfg, training);
  return backbone_forward(nodes, p, cfg, atts);
}

}  // namespace vig
