#include "kvt/run_config.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "kvt/errors.hpp"
#include "kvt/text_format.hpp"

namespace kvt {

namespace {

constexpr std::uint64_t kStepsPerEpoch = 1000;

std::string join(const std::vector<std::string>& parts, char sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) out += (i ? std::string(1, sep) : "") + parts[i];
  return out;
}

std::size_t as_size(const std::string& value, const std::string& key) {
  return static_cast<std::size_t>(parse_uint(value, key));
}

void apply(RunConfig& c, const std::string& key, const std::string& value) {
  if (key == "task") {
    c.task.kind = parse_task(value);
  } else if (key == "seq_len") {
    c.task.seq_len = as_size(value, key);
  } else if (key == "corpus") {
    c.task.corpus_path = value;
  } else if (key == "val_fraction") {
    c.task.val_fraction = parse_double(value, key);
  } else if (key == "attention") {
    c.attention.clear();
    for (const auto& part : split(value, ',')) {
      const auto name = trim(part);
      if (!name.empty()) c.attention.push_back(AttentionKind::parse(name, 1).name());
    }
  } else if (key == "pos_dim") {
    c.pos_dim = as_size(value, key);
  } else if (key == "d_model") {
    c.model.d_model = as_size(value, key);
  } else if (key == "heads") {
    c.model.heads = as_size(value, key);
  } else if (key == "layers") {
    c.model.layers = as_size(value, key);
  } else if (key == "ffn_dim") {
    c.model.ffn_dim = as_size(value, key);
  } else if (key == "max_len") {
    c.model.max_len = as_size(value, key);
  } else if (key == "dropout") {
    c.model.dropout = parse_double(value, key);
  } else if (key == "learned_input_pos") {
    c.model.learned_input_pos = parse_bool(value, key);
  } else if (key == "seed") {
    const auto seed = parse_uint(value, key);
    c.task.seed = seed;
    c.train.seed = seed;
    c.model.seed = seed;
  } else if (key == "lr") {
    c.train.base_lr = parse_double(value, key);
  } else if (key == "warmup") {
    c.train.warmup_steps = as_size(value, key);
  } else if (key == "steps") {
    c.train.max_steps = as_size(value, key);
  } else if (key == "epochs") {
    c.train.max_steps = as_size(value, key) * kStepsPerEpoch;
  } else if (key == "batch_size") {
    c.train.batch_size = as_size(value, key);
  } else if (key == "grad_clip") {
    c.train.grad_clip_norm = parse_double(value, key);
  } else if (key == "eval_interval") {
    c.train.eval_interval = as_size(value, key);
  } else if (key == "eval_batches") {
    c.train.eval_batches = as_size(value, key);
  } else if (key == "out_dir") {
    c.out_dir = value;
  } else if (key == "maps") {
    if (value != "last" && value != "all") throw ConfigError("maps: expected 'last' or 'all', got '" + value + "'");
    c.all_maps = value == "all";
  } else {
    throw ConfigError("unknown config key '" + key + "'");
  }
}

}  // namespace

const std::vector<std::string>& run_config_keys() {
  static const std::vector<std::string> keys{
      "preset",  "task",  "seq_len", "corpus",    "val_fraction",  "attention",    "pos_dim",
      "d_model", "heads", "layers",  "ffn_dim",   "max_len",       "dropout",      "learned_input_pos",
      "seed",    "lr",    "warmup",  "steps",     "epochs",        "batch_size",   "grad_clip",
      "eval_interval",    "eval_batches",         "out_dir",       "maps"};
  return keys;
}

RunConfig preset_config(const std::string& name) {
  RunConfig c;
  c.preset = name;
  c.model.d_model = 64;
  c.model.layers = 2;
  c.model.max_len = 0;
  c.train.warmup_steps = 5;
  c.train.grad_clip_norm = 5.0;
  if (name == "synthetic") {
    c.task.kind = TaskKind::Copy;
    c.task.seq_len = 16;
    c.model.heads = 2;
    c.train.base_lr = 1e-3;
    c.train.max_steps = 2 * kStepsPerEpoch;
    c.train.batch_size = 128;
    c.train.eval_interval = 100;
    c.pos_dim = 10;
  } else if (name == "charlm") {
    c.task.kind = TaskKind::Chars;
    c.task.seq_len = 64;
    c.model.heads = 4;
    c.model.dropout = 0.2;
    c.train.base_lr = 5e-4;
    c.train.max_steps = 1000;
    c.train.batch_size = 64;
    c.train.eval_interval = 50;
    c.pos_dim = 20;
  } else if (name == "numbers") {
    c.task.kind = TaskKind::Numbers;
    c.task.seq_len = 16;
    c.model.heads = 8;
    c.model.layers = 4;
    c.train.base_lr = 1e-3;
    c.train.max_steps = 2000;
    c.train.batch_size = 64;
    c.train.eval_interval = 100;
    c.pos_dim = 10;
  } else {
    throw ConfigError("unknown preset '" + name + "' (expected synthetic, charlm or numbers)");
  }
  return c;
}

RunConfig parse_run_config(const std::map<std::string, std::string>& values,
                           const std::map<std::string, std::string>& overrides) {
  auto merged = values;
  for (const auto& [k, v] : overrides) merged[k] = v;
  if (merged.count("steps") && merged.count("epochs")) {
    throw ConfigError("'steps' and 'epochs' both set; give only one");
  }
  const auto preset = merged.count("preset") ? merged.at("preset") : std::string("synthetic");
  RunConfig c = preset_config(preset);
  for (const auto& [key, value] : merged) {
    if (key != "preset") apply(c, key, value);
  }
  c.validate();
  return c;
}

RunConfig load_run_config(const std::optional<std::filesystem::path>& path,
                          const std::map<std::string, std::string>& overrides) {
  std::map<std::string, std::string> values;
  if (path) {
    std::ifstream in(*path);
    if (!in) throw IoError("cannot read config file " + path->string());
    std::ostringstream text;
    text << in.rdbuf();
    values = parse_key_values(text.str());
  }
  return parse_run_config(values, overrides);
}

std::vector<AttentionKind> RunConfig::attention_kinds() const {
  std::vector<AttentionKind> out;
  for (const auto& name : attention) out.push_back(AttentionKind::parse(name, pos_dim));
  return out;
}

ModelConfig RunConfig::model_for(const AttentionKind& kind, const TaskData& data) const {
  ModelConfig m = model;
  m.mode = data.mode();
  m.vocab_size = data.vocab_size();
  m.attention = kind;
  if (m.max_len == 0) m.max_len = task.seq_len;
  return m;
}

void RunConfig::validate() const {
  if (attention.empty()) throw ConfigError("attention: the list is empty");
  for (std::size_t i = 0; i < attention.size(); ++i) {
    if (std::find(attention.begin(), attention.begin() + static_cast<std::ptrdiff_t>(i), attention[i]) !=
        attention.begin() + static_cast<std::ptrdiff_t>(i)) {
      throw ConfigError("attention: '" + attention[i] + "' listed twice");
    }
  }
  if (pos_dim == 0) throw ConfigError("pos_dim must be at least 1");
  try {
    task.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("task=") + task_name(task.kind) + ": " + e.what());
  }
  train.validate();
  if (model.max_len != 0 && model.max_len < task.seq_len) {
    throw ConfigError("max_len " + std::to_string(model.max_len) + " is shorter than seq_len " +
                      std::to_string(task.seq_len));
  }
  ModelConfig probe = model;
  if (probe.max_len == 0) probe.max_len = task.seq_len;
  probe.validate();
}

std::map<std::string, std::string> RunConfig::to_map() const {
  return {
      {"preset", preset},
      {"task", task_name(task.kind)},
      {"seq_len", std::to_string(task.seq_len)},
      {"corpus", task.corpus_path},
      {"val_fraction", format_double(task.val_fraction)},
      {"attention", join(attention, ',')},
      {"pos_dim", std::to_string(pos_dim)},
      {"d_model", std::to_string(model.d_model)},
      {"heads", std::to_string(model.heads)},
      {"layers", std::to_string(model.layers)},
      {"ffn_dim", std::to_string(model.ffn_dim)},
      {"max_len", std::to_string(model.max_len)},
      {"dropout", format_double(model.dropout)},
      {"learned_input_pos", model.learned_input_pos ? "true" : "false"},
      {"seed", std::to_string(train.seed)},
      {"lr", format_double(train.base_lr)},
      {"warmup", std::to_string(train.warmup_steps)},
      {"steps", std::to_string(train.max_steps)},
      {"batch_size", std::to_string(train.batch_size)},
      {"grad_clip", format_double(train.grad_clip_norm)},
      {"eval_interval", std::to_string(train.eval_interval)},
      {"eval_batches", std::to_string(train.eval_batches)},
      {"out_dir", out_dir.string()},
      {"maps", all_maps ? "all" : "last"},
  };
}

}  // namespace kvt
