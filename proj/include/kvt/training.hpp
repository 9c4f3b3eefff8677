#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "kvt/attention.hpp"
#include "kvt/model.hpp"
#include "kvt/tasks.hpp"
#include "kvt/tensor.hpp"

namespace kvt {

struct TrainConfig {
  double base_lr = 1e-3;
  std::size_t warmup_steps = 5;
  std::size_t max_steps = 2000;
  std::size_t batch_size = 128;
  double grad_clip_norm = 5.0;  // 0 disables clipping
  std::uint64_t seed = 0;
  std::size_t eval_interval = 100;
  std::size_t eval_batches = 8;

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

/// Linear warmup into a half-cosine decay that reaches 0 at max_steps:
///   base_lr * 0.5 * (1 + cos(pi * step / max_steps)) * min(1, step / warmup)
double cosine_warmup_lr(std::size_t step, std::size_t warmup, std::size_t max_steps, double base_lr);

/// Mean over all positions of -log softmax(logits)[target]. `logits` is
/// [..., V] with one row per target id.
template <typename T>
BasicTensor<T> cross_entropy_loss(const BasicTensor<T>& logits, std::span<const std::int32_t> targets);

template <typename T>
double global_grad_norm(const std::vector<BasicTensor<T>>& params);

/// Rescales every gradient by max_norm / g when the global L2 norm g exceeds
/// max_norm. Returns g. Throws NumericError on a non-finite gradient.
template <typename T>
double clip_grad_norm(std::vector<BasicTensor<T>>& params, double max_norm);

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t step = 0;
  std::vector<std::vector<float>> first_moment;
  std::vector<std::vector<float>> second_moment;

  static AdamState for_parameters(const std::vector<Tensor>& params);
};

/// Bias-corrected Adam update. Parameters without a gradient are treated as
/// having a zero gradient. Throws ShapeError if the state does not match.
void adam_step(std::vector<Tensor>& params, AdamState& state, double lr);

struct Accuracy {
  double token = 0.0;
  double sequence = 0.0;
  std::size_t tokens = 0;
  std::size_t sequences = 0;
};

/// Counts argmax(logits) == target per position and per fully correct row.
Accuracy score_predictions(const Tensor& logits, const TokenBatch& targets);

/// Evaluation-mode accuracy over `dataset` with recording disabled.
Accuracy evaluate_accuracy(Model& model, const std::vector<SupervisedBatch>& dataset);
double evaluate_loss(Model& model, const std::vector<SupervisedBatch>& dataset);

enum class TaskKind { Reverse, Sort, Swap, Sub, Copy, Numbers, Chars };

std::string task_name(TaskKind kind);
TaskKind parse_task(const std::string& name);
bool is_synthetic(TaskKind kind);

struct TaskSpec {
  TaskKind kind = TaskKind::Copy;
  std::size_t seq_len = 16;
  std::string corpus_path;  // Chars only
  std::uint64_t seed = 0;
  double val_fraction = 0.9;

  void validate() const;
  bool operator==(const TaskSpec&) const = default;
};

/// Data behind a TaskSpec: corpora for the LM tasks, the task definition for
/// synthetic ones.
struct TaskData {
  TaskSpec spec;
  std::optional<SyntheticTask> synthetic;
  std::optional<Corpus> train;
  std::optional<Corpus> val;
  std::vector<std::string> vocab;

  std::size_t vocab_size() const { return vocab.size(); }
  ModelMode mode() const { return synthetic ? ModelMode::EncoderClassifier : ModelMode::CausalLM; }
};

TaskData prepare_task(const TaskSpec& spec);

struct LossRecord {
  std::size_t step = 0;
  std::string split;  // "train" or "val"
  double loss = 0.0;
  double lr = 0.0;
};

struct RunReport {
  std::string task;
  std::string variant;
  std::uint64_t seed = 0;
  std::vector<LossRecord> records;
  std::size_t steps_completed = 0;
  Accuracy accuracy;
  double initial_val_loss = 0.0;
  double final_val_loss = 0.0;
  std::size_t params = 0;
  CostReport cost;
  std::string corpus_note;
  // First validation sample and its per-layer attention snapshots.
  TokenBatch attention_input;
  std::vector<AttentionTrace<float>> attention;
};

struct DivergenceError : NumericError {
  DivergenceError(const std::string& what, RunReport last_good)
      : NumericError(what), report(std::move(last_good)) {}
  RunReport report;
};

struct RunHooks {
  std::function<void(const LossRecord&)> on_record;
};

/// forward -> loss -> backward -> clip -> Adam at the scheduled lr, for
/// train.max_steps batches. Loss is logged every eval_interval steps and
/// after the final update. Throws DivergenceError on a non-finite loss.
RunReport train_run(Model& model, const TaskData& data, const TrainConfig& train, const RunHooks& hooks = {});
RunReport train_run(const ModelConfig& model_config, const TaskSpec& task, const TrainConfig& train,
                    const RunHooks& hooks = {});

/// Fixed validation set for `data` (identical on every call).
std::vector<SupervisedBatch> validation_set(const TaskData& data, const TrainConfig& train);

}  // namespace kvt
