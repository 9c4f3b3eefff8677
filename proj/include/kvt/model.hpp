#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "kvt/attention.hpp"
#include "kvt/rng.hpp"
#include "kvt/tensor.hpp"

namespace kvt {

enum class ModelMode { EncoderClassifier, CausalLM };

std::string mode_name(ModelMode mode);
ModelMode parse_mode(const std::string& name);

struct ModelConfig {
  ModelMode mode = ModelMode::EncoderClassifier;
  std::size_t vocab_size = 10;
  std::size_t d_model = 64;
  std::size_t heads = 2;
  std::size_t layers = 2;
  std::size_t ffn_dim = 0;  // 0 means 4 * d_model
  std::size_t max_len = 16;
  double dropout = 0.0;
  AttentionKind attention = AttentionKind::qkv();
  std::uint64_t seed = 0;
  // Fixed sinusoidal input positions unless set.
  bool learned_input_pos = false;

  std::size_t ffn_width() const { return ffn_dim == 0 ? 4 * d_model : ffn_dim; }
  /// Throws ConfigError naming the offending field.
  void validate() const;

  /// One `key=value` line per field.
  std::map<std::string, std::string> to_map() const;
  static ModelConfig from_map(const std::map<std::string, std::string>& values);

  bool operator==(const ModelConfig&) const = default;
};

/// Row-major [batch, len] token ids.
struct TokenBatch {
  std::size_t batch = 0;
  std::size_t len = 0;
  std::vector<std::int32_t> ids;

  static TokenBatch single(std::vector<std::int32_t> row);
  std::int32_t at(std::size_t b, std::size_t t) const { return ids[b * len + t]; }
};

template <typename T>
struct TransformerBlock {
  BasicTensor<T> ln1_gamma, ln1_beta;
  AttentionLayer<T> attention;
  BasicTensor<T> ln2_gamma, ln2_beta;
  BasicTensor<T> ffn_w1, ffn_b1;  // [d, F], [F]
  BasicTensor<T> ffn_w2, ffn_b2;  // [F, d], [d]
};

/// Pre-norm transformer: token embedding plus input positions, L blocks of
/// (norm -> attention -> residual, norm -> ReLU FFN -> residual), a final
/// norm, and a linear head to vocabulary logits. EncoderClassifier attends
/// bidirectionally; CausalLM masks future positions.
template <typename T>
class TransformerModel {
 public:
  explicit TransformerModel(ModelConfig config);

  const ModelConfig& config() const { return config_; }

  /// [B, T] tokens -> [B, T, V] logits. Throws IndexError for ids outside
  /// [0, V) and CapacityError for T > max_len. `traces`, when given, receives
  /// one snapshot per layer.
  BasicTensor<T> forward(const TokenBatch& tokens, std::vector<AttentionTrace<T>>* traces = nullptr);

  void set_training(bool training) { training_ = training; }
  bool training() const { return training_; }

  std::vector<std::pair<std::string, BasicTensor<T>>> named_parameters() const;
  std::vector<BasicTensor<T>> parameters() const;
  std::size_t param_count() const;
  void zero_grad();

  std::vector<TransformerBlock<T>>& blocks() { return blocks_; }
  const std::vector<TransformerBlock<T>>& blocks() const { return blocks_; }
  BasicTensor<T>& token_embedding() { return token_embedding_; }
  Rng& dropout_rng() { return dropout_rng_; }

 private:
  BasicTensor<T> input_positions(std::size_t len) const;

  ModelConfig config_;
  BasicTensor<T> token_embedding_;  // [V, d]
  BasicTensor<T> input_pos_;        // [N_max, d], learned or fixed sinusoid
  std::vector<TransformerBlock<T>> blocks_;
  BasicTensor<T> final_gamma_, final_beta_;
  BasicTensor<T> head_w_, head_b_;  // [d, V], [V]
  Rng dropout_rng_;
  bool training_ = false;
};

using Model = TransformerModel<float>;

/// Fixed sinusoidal table [len, d].
std::vector<double> sinusoidal_positions(std::size_t len, std::size_t d);

/// Autoregressive sampling for CausalLM models. The context is truncated to
/// the last max_len tokens each step; temperature 0 selects the argmax.
std::vector<std::int32_t> generate(Model& model, std::vector<std::int32_t> prompt, std::size_t steps,
                                   double temperature, Rng& rng);

struct Checkpoint {
  ModelConfig config;
  std::vector<std::string> vocab;
  std::string task;
  std::vector<std::pair<std::string, Tensor>> tensors;
};

/// Binary key -> array map with the model config and vocabulary. Values are
/// stored as raw float32 so a round trip is bit-identical.
void save_checkpoint(const std::filesystem::path& path, const Model& model,
                     const std::vector<std::string>& vocab = {}, const std::string& task = "");
Checkpoint read_checkpoint(const std::filesystem::path& path);
/// Builds a model from the stored config and copies every named tensor in.
Model load_model(const Checkpoint& checkpoint);

}  // namespace kvt
