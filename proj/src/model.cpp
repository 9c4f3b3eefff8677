#include "kvt/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "kvt/ops.hpp"
#include "kvt/text_format.hpp"

namespace kvt {

std::string mode_name(ModelMode mode) {
  return mode == ModelMode::CausalLM ? "causal_lm" : "encoder_classifier";
}

ModelMode parse_mode(const std::string& name) {
  if (name == "causal_lm") return ModelMode::CausalLM;
  if (name == "encoder_classifier") return ModelMode::EncoderClassifier;
  throw ConfigError("unknown model mode '" + name + "' (expected encoder_classifier or causal_lm)");
}

void ModelConfig::validate() const {
  if (vocab_size == 0) throw ConfigError("vocab_size must be positive");
  if (d_model == 0) throw ConfigError("d_model must be positive");
  if (heads == 0) throw ConfigError("heads must be positive");
  if (d_model % heads != 0) {
    throw ConfigError("d_model " + std::to_string(d_model) + " is not divisible by heads " + std::to_string(heads));
  }
  if (layers == 0) throw ConfigError("layers must be positive");
  if (max_len == 0) throw ConfigError("max_len must be positive");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must lie in [0, 1)");
}

std::map<std::string, std::string> ModelConfig::to_map() const {
  return {
      {"mode", mode_name(mode)},
      {"vocab_size", std::to_string(vocab_size)},
      {"d_model", std::to_string(d_model)},
      {"heads", std::to_string(heads)},
      {"layers", std::to_string(layers)},
      {"ffn_dim", std::to_string(ffn_dim)},
      {"max_len", std::to_string(max_len)},
      {"dropout", format_double(dropout)},
      {"attention", attention.name()},
      {"pos_dim", std::to_string(attention.pos_dim().value_or(0))},
      {"seed", std::to_string(seed)},
      {"learned_input_pos", learned_input_pos ? "true" : "false"},
  };
}

ModelConfig ModelConfig::from_map(const std::map<std::string, std::string>& values) {
  const auto get = [&](const char* key) -> const std::string& {
    const auto it = values.find(key);
    if (it == values.end()) throw ConfigError(std::string("model config is missing '") + key + "'");
    return it->second;
  };
  ModelConfig c;
  c.mode = parse_mode(get("mode"));
  c.vocab_size = parse_uint(get("vocab_size"), "vocab_size");
  c.d_model = parse_uint(get("d_model"), "d_model");
  c.heads = parse_uint(get("heads"), "heads");
  c.layers = parse_uint(get("layers"), "layers");
  c.ffn_dim = parse_uint(get("ffn_dim"), "ffn_dim");
  c.max_len = parse_uint(get("max_len"), "max_len");
  c.dropout = parse_double(get("dropout"), "dropout");
  c.attention = AttentionKind::parse(get("attention"), parse_uint(get("pos_dim"), "pos_dim"));
  c.seed = parse_uint(get("seed"), "seed");
  c.learned_input_pos = parse_bool(get("learned_input_pos"), "learned_input_pos");
  c.validate();
  return c;
}

TokenBatch TokenBatch::single(std::vector<std::int32_t> row) {
  TokenBatch batch;
  batch.batch = 1;
  batch.len = row.size();
  batch.ids = std::move(row);
  return batch;
}

std::vector<double> sinusoidal_positions(std::size_t len, std::size_t d) {
  std::vector<double> table(len * d);
  for (std::size_t pos = 0; pos < len; ++pos) {
    for (std::size_t i = 0; i < d; i += 2) {
      const double freq = std::pow(10000.0, -static_cast<double>(i) / static_cast<double>(d));
      table[pos * d + i] = std::sin(static_cast<double>(pos) * freq);
      if (i + 1 < d) table[pos * d + i + 1] = std::cos(static_cast<double>(pos) * freq);
    }
  }
  return table;
}

namespace {

constexpr double kInitStd = 0.02;

template <typename T>
BasicTensor<T> normal_param(Shape shape, Rng& rng, double stddev = kInitStd) {
  std::vector<T> values(shape_numel(shape));
  for (auto& v : values) v = static_cast<T>(rng.normal(0.0, stddev));
  return BasicTensor<T>(std::move(shape), std::move(values), true);
}

template <typename T>
BasicTensor<T> constant_param(Shape shape, T value) {
  return BasicTensor<T>::full(std::move(shape), value, true);
}

}  // namespace

template <typename T>
TransformerModel<T>::TransformerModel(ModelConfig config)
    : config_(std::move(config)), dropout_rng_(derive_seed(config_.seed, 0xd5)) {
  config_.validate();
  Rng init(derive_seed(config_.seed, 0x1a));
  const std::size_t d = config_.d_model;
  const std::size_t v = config_.vocab_size;
  const std::size_t f = config_.ffn_width();

  token_embedding_ = normal_param<T>({v, d}, init, 1.0);
  if (config_.learned_input_pos) {
    input_pos_ = normal_param<T>({config_.max_len, d}, init);
  } else {
    const auto table = sinusoidal_positions(config_.max_len, d);
    input_pos_ = BasicTensor<T>({config_.max_len, d}, std::vector<T>(table.begin(), table.end()));
  }
  const bool causal = config_.mode == ModelMode::CausalLM;
  for (std::size_t l = 0; l < config_.layers; ++l) {
    TransformerBlock<T> block;
    block.ln1_gamma = constant_param<T>({d}, T{1});
    block.ln1_beta = constant_param<T>({d}, T{0});
    block.attention = AttentionLayer<T>::create(d, config_.heads, config_.max_len, config_.attention, causal, init);
    block.ln2_gamma = constant_param<T>({d}, T{1});
    block.ln2_beta = constant_param<T>({d}, T{0});
    block.ffn_w1 = normal_param<T>({d, f}, init);
    block.ffn_b1 = constant_param<T>({f}, T{0});
    block.ffn_w2 = normal_param<T>({f, d}, init);
    block.ffn_b2 = constant_param<T>({d}, T{0});
    blocks_.push_back(std::move(block));
  }
  final_gamma_ = constant_param<T>({d}, T{1});
  final_beta_ = constant_param<T>({d}, T{0});
  head_w_ = normal_param<T>({d, v}, init);
  head_b_ = constant_param<T>({v}, T{0});
}

template <typename T>
BasicTensor<T> TransformerModel<T>::input_positions(std::size_t len) const {
  std::vector<std::int32_t> rows(len);
  std::iota(rows.begin(), rows.end(), 0);
  return gather_rows(input_pos_, rows);
}

template <typename T>
BasicTensor<T> TransformerModel<T>::forward(const TokenBatch& tokens, std::vector<AttentionTrace<T>>* traces) {
  if (tokens.batch == 0 || tokens.len == 0 || tokens.ids.size() != tokens.batch * tokens.len) {
    throw ShapeError("token batch must be a non-empty [B, T] array");
  }
  if (tokens.len > config_.max_len) {
    throw CapacityError("sequence length " + std::to_string(tokens.len) + " exceeds max_len " +
                        std::to_string(config_.max_len));
  }
  for (auto id : tokens.ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= config_.vocab_size) {
      throw IndexError("token id " + std::to_string(id) + " outside [0, " + std::to_string(config_.vocab_size) + ")");
    }
  }
  const std::size_t d = config_.d_model;
  const T rate = training_ ? static_cast<T>(config_.dropout) : T{0};

  auto x = reshape(gather_rows(token_embedding_, tokens.ids), {tokens.batch, tokens.len, d});
  x = add(x, input_positions(tokens.len));
  x = dropout(x, rate, dropout_rng_);

  if (traces != nullptr) traces->assign(blocks_.size(), {});
  AttentionContext<T> ctx{training_, rate, &dropout_rng_, nullptr};
  for (std::size_t l = 0; l < blocks_.size(); ++l) {
    const auto& block = blocks_[l];
    ctx.trace = traces != nullptr ? &(*traces)[l] : nullptr;
    auto h = layer_norm(x, block.ln1_gamma, block.ln1_beta);
    auto attended = multi_head_attention(h, block.attention, ctx);
    x = add(x, dropout(attended, rate, dropout_rng_));

    h = layer_norm(x, block.ln2_gamma, block.ln2_beta);
    auto hidden = relu(add(matmul(h, block.ffn_w1), block.ffn_b1));
    auto ffn = add(matmul(hidden, block.ffn_w2), block.ffn_b2);
    x = add(x, dropout(ffn, rate, dropout_rng_));
  }
  x = layer_norm(x, final_gamma_, final_beta_);
  return add(matmul(x, head_w_), head_b_);
}

template <typename T>
std::vector<std::pair<std::string, BasicTensor<T>>> TransformerModel<T>::named_parameters() const {
  std::vector<std::pair<std::string, BasicTensor<T>>> out;
  out.emplace_back("token_embedding", token_embedding_);
  if (config_.learned_input_pos) out.emplace_back("input_pos", input_pos_);
  for (std::size_t l = 0; l < blocks_.size(); ++l) {
    const auto& b = blocks_[l];
    const std::string prefix = "blocks." + std::to_string(l) + ".";
    out.emplace_back(prefix + "ln1_gamma", b.ln1_gamma);
    out.emplace_back(prefix + "ln1_beta", b.ln1_beta);
    for (auto& [name, tensor] : b.attention.named_parameters()) out.emplace_back(prefix + "attn." + name, tensor);
    out.emplace_back(prefix + "ln2_gamma", b.ln2_gamma);
    out.emplace_back(prefix + "ln2_beta", b.ln2_beta);
    out.emplace_back(prefix + "ffn_w1", b.ffn_w1);
    out.emplace_back(prefix + "ffn_b1", b.ffn_b1);
    out.emplace_back(prefix + "ffn_w2", b.ffn_w2);
    out.emplace_back(prefix + "ffn_b2", b.ffn_b2);
  }
  out.emplace_back("final_gamma", final_gamma_);
  out.emplace_back("final_beta", final_beta_);
  out.emplace_back("head_w", head_w_);
  out.emplace_back("head_b", head_b_);
  return out;
}

template <typename T>
std::vector<BasicTensor<T>> TransformerModel<T>::parameters() const {
  std::vector<BasicTensor<T>> out;
  for (auto& [name, tensor] : named_parameters()) out.push_back(tensor);
  return out;
}

template <typename T>
std::size_t TransformerModel<T>::param_count() const {
  std::size_t total = 0;
  for (const auto& [name, tensor] : named_parameters()) total += tensor.numel();
  return total;
}

template <typename T>
void TransformerModel<T>::zero_grad() {
  for (auto& tensor : parameters()) tensor.zero_grad();
}

template class TransformerModel<float>;
template class TransformerModel<double>;

std::vector<std::int32_t> generate(Model& model, std::vector<std::int32_t> prompt, std::size_t steps,
                                   double temperature, Rng& rng) {
  if (model.config().mode != ModelMode::CausalLM) throw ConfigError("generate() requires a causal_lm model");
  if (prompt.empty()) throw ConfigError("generate() requires a non-empty prompt");
  if (temperature < 0.0) throw ConfigError("temperature must be non-negative");
  const bool was_training = model.training();
  model.set_training(false);
  NoGradScope<float> no_grad;
  const std::size_t vocab = model.config().vocab_size;
  const std::size_t window = model.config().max_len;
  for (std::size_t step = 0; step < steps; ++step) {
    const std::size_t start = prompt.size() > window ? prompt.size() - window : 0;
    auto batch = TokenBatch::single(std::vector<std::int32_t>(prompt.begin() + static_cast<std::ptrdiff_t>(start),
                                                              prompt.end()));
    const auto logits = model.forward(batch);
    const auto all = logits.data();
    const float* last = all.data() + (batch.len - 1) * vocab;
    std::int32_t next = 0;
    if (temperature == 0.0) {
      next = static_cast<std::int32_t>(std::max_element(last, last + vocab) - last);
    } else {
      const double peak = *std::max_element(last, last + vocab);
      std::vector<double> probs(vocab);
      double total = 0.0;
      for (std::size_t i = 0; i < vocab; ++i) {
        probs[i] = std::exp((static_cast<double>(last[i]) - peak) / temperature);
        total += probs[i];
      }
      double u = rng.uniform() * total;
      next = static_cast<std::int32_t>(vocab - 1);
      for (std::size_t i = 0; i < vocab; ++i) {
        if (u < probs[i]) {
          next = static_cast<std::int32_t>(i);
          break;
        }
        u -= probs[i];
      }
    }
    prompt.push_back(next);
  }
  model.set_training(was_training);
  return prompt;
}

}  // namespace kvt
