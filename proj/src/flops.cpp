#include "vig/flops.hpp"

#include <iomanip>
#include <sstream>

namespace vig {

std::uint64_t FlopBreakdown::total_macs() const {
  std::uint64_t t = 0;
  for (const auto& p : parts) t += p.macs;
  return t;
}

std::uint64_t FlopBreakdown::part(const std::string& name) const {
  for (const auto& p : parts) {
    if (p.name == name) return p.macs;
  }
  throw Error("flop breakdown: unknown part " + name);
}

std::uint64_t FlopBreakdown::graph_macs() const {
  return part("key_query") + part("logits") + part("aggregate");
}

FlopBreakdown flop_estimate(const ModelConfig& cfg) {
  cfg.validate();
  const std::uint64_t n = cfg.num_nodes();
  const std::uint64_t d = cfg.embed_dim;
  const std::uint64_t blocks = cfg.num_blocks;

  FlopBreakdown b;

  std::uint64_t stem = 0;
  std::size_t h = cfg.input_h, w = cfg.input_w, in_c = cfg.input_c;
  for (const auto& cs : cfg.stem) {
    const std::size_t oh = ModelConfig::conv_out(h, cs);
    const std::size_t ow = ModelConfig::conv_out(w, cs);
    stem += static_cast<std::uint64_t>(oh) * ow * cs.out_channels * in_c * cs.kernel * cs.kernel;
    h = oh;
    w = ow;
    in_c = cs.out_channels;
  }
  b.parts.push_back({"stem", stem});

  b.parts.push_back({"w_in", blocks * n * d * d});
  b.parts.push_back({"key_query", blocks * 2 * n * d * d});
  b.parts.push_back({"logits", blocks * n * n * d});
  b.parts.push_back({"aggregate", blocks * n * n * d});
  // 4 heads of (2D/4 -> 2D/4): 4 * (D/2)^2 = D^2 per node
  b.parts.push_back({"w_update", blocks * n * d * d});
  b.parts.push_back({"w_out", blocks * n * 2 * d * d});
  b.parts.push_back({"ffn", blocks * n * 8 * d * d});
  b.parts.push_back({"head", d * d + d * cfg.num_classes});
  return b;
}

std::string format_flop_table(const ModelConfig& cfg, const FlopBreakdown& b) {
  std::ostringstream os;
  os << "config: input " << cfg.input_h << "x" << cfg.input_w << "x" << cfg.input_c << ", D="
     << cfg.embed_dim << ", blocks=" << cfg.num_blocks << ", N=" << cfg.num_nodes()
     << ", classes=" << cfg.num_classes << "\n";
  os << "counting convention: one MAC per multiply-accumulate; biases, norms and\n"
     << "activations excluded. The flops(2x) column counts each MAC as two flops.\n\n";
  os << std::left << std::setw(12) << "part" << std::right << std::setw(16) << "macs"
     << std::setw(16) << "flops(2x)" << "\n";
  for (const auto& p : b.parts) {
    os << std::left << std::setw(12) << p.name << std::right << std::setw(16) << p.macs
       << std::setw(16) << 2 * p.macs << "\n";
  }
  os << std::left << std::setw(12) << "total" << std::right << std::setw(16) << b.total_macs()
     << std::setw(16) << 2 * b.total_macs() << "\n";
  os << std::left << std::setw(12) << "graph" << std::right << std::setw(16) << b.graph_macs()
     << std::setw(16) << 2 * b.graph_macs() << "\n";
  return os.str();
}

}  // namespace vig
