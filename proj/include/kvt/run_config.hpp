#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "kvt/model.hpp"
#include "kvt/training.hpp"

namespace kvt {

/// Everything one `train` invocation needs. `model.mode`, `model.vocab_size`
/// and `model.attention` are filled per run from the task and the attention
/// list; `model.max_len` 0 means "use seq_len".
struct RunConfig {
  std::string preset = "synthetic";
  TaskSpec task;
  ModelConfig model;
  TrainConfig train;
  std::vector<std::string> attention{"qkv", "kv", "kvpos"};
  std::size_t pos_dim = 10;
  std::filesystem::path out_dir = "runs";
  bool all_maps = false;  // every layer and head instead of last layer, head 0

  /// Throws ConfigError naming the offending key.
  void validate() const;
  std::vector<AttentionKind> attention_kinds() const;
  /// Model config for one run of the sweep.
  ModelConfig model_for(const AttentionKind& kind, const TaskData& data) const;

  /// Complete key=value form; parses back to an equal config.
  std::map<std::string, std::string> to_map() const;

  bool operator==(const RunConfig&) const = default;
};

/// Keys accepted by parse_run_config, in documentation order.
const std::vector<std::string>& run_config_keys();

/// Presets: "synthetic", "charlm", "numbers". Throws ConfigError on others.
RunConfig preset_config(const std::string& name);

/// `preset` (if present) seeds the defaults, then every other key applies on
/// top; `overrides` win over `values`. `epochs` is shorthand for
/// steps = 1000 * epochs and may not be combined with `steps`.
RunConfig parse_run_config(const std::map<std::string, std::string>& values,
                           const std::map<std::string, std::string>& overrides = {});
RunConfig load_run_config(const std::optional<std::filesystem::path>& path,
                          const std::map<std::string, std::string>& overrides = {});

}  // namespace kvt
