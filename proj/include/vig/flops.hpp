#pragma once

// Analytic multiply-accumulate cost model for one forward pass (batch 1).
// Part names line up with the kernel MAC-counter stages so the estimate can
// be validated against an instrumented run.

#include <cstdint>
#include <string>
#include <vector>

#include "vig/model.hpp"

namespace vig {

struct FlopPart {
  std::string name;
  std::uint64_t macs;
};

struct FlopBreakdown {
  std::vector<FlopPart> parts;

  std::uint64_t total_macs() const;
  std::uint64_t part(const std::string& name) const;
  // LRGC + aggregation: the terms that scale as N*D^2 + N^2*D
  std::uint64_t graph_macs() const;
};

FlopBreakdown flop_estimate(const ModelConfig& cfg);

// Human-readable table; reports raw MACs plus the 2*MACs convention.
std::string format_flop_table(const ModelConfig& cfg, const FlopBreakdown& b);

}  // namespace vig
