#pragma once

// Key=value run configuration: the on-disk config schema, the fully-resolved
// manifest every command writes, and the mapping onto ModelConfig/TrainConfig.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "vig/model.hpp"
#include "vig/train.hpp"

namespace vig {

using KvMap = std::map<std::string, std::string>;

// One `key = value` per line; '#' starts a comment; blank lines ignored.
KvMap parse_kv_text(const std::string& text);
KvMap parse_kv_file(const std::string& path);
std::string serialize_kv(const KvMap& kv);

// Stem spec string: comma-separated out_channels:kernel:stride:pad entries.
std::string stem_to_string(const std::vector<ConvSpec>& stem);
std::vector<ConvSpec> stem_from_string(const std::string& text);

// Fully-resolved settings of one run.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  bool synthetic = false;
  std::string data_dir;
  std::size_t synthetic_train = 2048;
  std::size_t synthetic_test = 512;
  std::uint64_t seed = 0;
  bool deterministic = false;
  std::string out_dir;
};

// Applies kv entries onto rc; unknown keys raise ConfigError.
void apply_kv(RunConfig& rc, const KvMap& kv);
RunConfig run_config_from_kv(const KvMap& kv);
KvMap run_config_to_kv(const RunConfig& rc);

// The manifest is itself a loadable config file.
void write_manifest(const RunConfig& rc, const std::string& path);

}  // namespace vig
