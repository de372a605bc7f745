#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "hemb/model.hpp"
#include "hemb/train.hpp"

namespace hemb {

/// Everything a command needs to reproduce a run.
struct RunConfig {
  ModelConfig model;
  OptimizerConfig optimizer;
  std::size_t batch_size = 32;
  std::size_t train_per_class = 200;
  std::size_t test_per_class = 50;
  std::size_t num_points = 256;
  /// "synthetic", or a manifest written by `synth` (one "file,label" per row).
  std::string train_data = "synthetic";
  std::string test_data = "synthetic";
  std::string output_dir = "run";
  std::uint64_t seed = 0;

  /// Desk-scale defaults for the synthetic benchmark.
  static RunConfig defaults();
};

/// Keys accepted by set_key(), in snapshot order.
const std::vector<std::string>& config_keys();

/// Assigns one field from text. Unknown keys raise ConfigError listing the
/// valid ones; malformed values raise ConfigError naming the key.
void set_key(RunConfig& config, std::string_view key, std::string_view value);

/// Applies "key = value" lines; '#' starts a comment.
void apply_config_text(RunConfig& config, std::string_view text);

/// Resolved snapshot, one "key = value" per key. Parsing it back through
/// apply_config_text reproduces the config exactly.
std::string config_text(const RunConfig& config);

}  // namespace hemb
