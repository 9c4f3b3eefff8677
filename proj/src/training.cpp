#include "kvt/training.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "kvt/ops.hpp"
#include "tensor_detail.hpp"

namespace kvt {

using detail::make_result;
using detail::NodePtr;

void TrainConfig::validate() const {
  if (!(base_lr > 0.0)) throw ConfigError("lr must be positive");
  if (warmup_steps < 1) throw ConfigError("warmup must be at least 1");
  if (max_steps < 1) throw ConfigError("steps must be at least 1");
  if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
  if (grad_clip_norm < 0.0) throw ConfigError("grad_clip must be non-negative (0 disables)");
  if (eval_interval < 1) throw ConfigError("eval_interval must be at least 1");
  if (eval_batches < 1) throw ConfigError("eval_batches must be at least 1");
}

double cosine_warmup_lr(std::size_t step, std::size_t warmup, std::size_t max_steps, double base_lr) {
  if (max_steps == 0) throw ConfigError("cosine_warmup_lr: max_steps must be positive");
  if (warmup == 0) throw ConfigError("cosine_warmup_lr: warmup must be positive");
  if (step > max_steps) throw ConfigError("cosine_warmup_lr: step beyond max_steps");
  const double progress = static_cast<double>(step) / static_cast<double>(max_steps);
  double factor = 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
  if (step < warmup) factor *= static_cast<double>(step) / static_cast<double>(warmup);
  return base_lr * factor;
}

// ---------------------------------------------------------------------------
// loss

template <typename T>
BasicTensor<T> cross_entropy_loss(const BasicTensor<T>& logits, std::span<const std::int32_t> targets) {
  const std::size_t vocab = logits.dim(-1);
  const std::size_t rows = logits.numel() / vocab;
  if (targets.size() != rows) {
    throw ShapeError("cross_entropy_loss: " + std::to_string(targets.size()) + " targets for logits " +
                     shape_str(logits.shape()));
  }
  for (auto t : targets) {
    if (t < 0 || static_cast<std::size_t>(t) >= vocab) {
      throw IndexError("cross_entropy_loss: target " + std::to_string(t) + " outside [0, " + std::to_string(vocab) + ")");
    }
  }
  const auto in = logits.data();
  std::vector<T> probs(logits.numel());
  double total = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = in.data() + r * vocab;
    T* p = probs.data() + r * vocab;
    const T peak = *std::max_element(row, row + vocab);
    T z{0};
    for (std::size_t j = 0; j < vocab; ++j) {
      p[j] = std::exp(row[j] - peak);
      z += p[j];
    }
    for (std::size_t j = 0; j < vocab; ++j) p[j] /= z;
    const auto t = static_cast<std::size_t>(targets[r]);
    total += static_cast<double>(peak + std::log(z) - row[t]);
  }
  auto result = make_result<T>(Shape{1}, std::vector<T>{static_cast<T>(total / static_cast<double>(rows))});
  NodePtr<T> ln = logits.node();
  std::vector<std::int32_t> kept(targets.begin(), targets.end());
  record_op<T>(result, {ln}, [ln, probs = std::move(probs), kept = std::move(kept), rows, vocab](TensorNode<T>& o) {
    ln->ensure_grad();
    const T g = o.grad[0] / static_cast<T>(rows);
    for (std::size_t r = 0; r < rows; ++r) {
      T* dst = ln->grad.data() + r * vocab;
      const T* p = probs.data() + r * vocab;
      for (std::size_t j = 0; j < vocab; ++j) dst[j] += g * p[j];
      dst[static_cast<std::size_t>(kept[r])] -= g;
    }
  });
  return result;
}

template BasicTensor<float> cross_entropy_loss(const BasicTensor<float>&, std::span<const std::int32_t>);
template BasicTensor<double> cross_entropy_loss(const BasicTensor<double>&, std::span<const std::int32_t>);

// ---------------------------------------------------------------------------
// optimization

template <typename T>
double global_grad_norm(const std::vector<BasicTensor<T>>& params) {
  double sq = 0.0;
  for (const auto& p : params) {
    if (!p.has_grad()) continue;
    for (T g : p.grad()) sq += static_cast<double>(g) * static_cast<double>(g);
  }
  return std::sqrt(sq);
}

template <typename T>
double clip_grad_norm(std::vector<BasicTensor<T>>& params, double max_norm) {
  if (!(max_norm > 0.0)) throw ConfigError("clip_grad_norm: max_norm must be positive");
  const double norm = global_grad_norm(params);
  if (!std::isfinite(norm)) {
    std::string where;
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (!params[i].has_grad()) continue;
      const auto g = params[i].grad();
      if (!std::all_of(g.begin(), g.end(), [](T v) { return std::isfinite(v); })) {
        where += (where.empty() ? "" : ", ") + std::to_string(i) + " " + shape_str(params[i].shape());
      }
    }
    throw NumericError("non-finite gradient in parameter(s) " + where);
  }
  if (norm > max_norm) {
    const T factor = static_cast<T>(max_norm / norm);
    for (auto& p : params) {
      if (!p.has_grad()) continue;
      for (auto& g : p.mutable_grad()) g *= factor;
    }
  }
  return norm;
}

template double global_grad_norm(const std::vector<BasicTensor<float>>&);
template double global_grad_norm(const std::vector<BasicTensor<double>>&);
template double clip_grad_norm(std::vector<BasicTensor<float>>&, double);
template double clip_grad_norm(std::vector<BasicTensor<double>>&, double);

AdamState AdamState::for_parameters(const std::vector<Tensor>& params) {
  AdamState state;
  for (const auto& p : params) {
    state.first_moment.emplace_back(p.numel(), 0.0f);
    state.second_moment.emplace_back(p.numel(), 0.0f);
  }
  return state;
}

void adam_step(std::vector<Tensor>& params, AdamState& state, double lr) {
  if (state.first_moment.size() != params.size() || state.second_moment.size() != params.size()) {
    throw ShapeError("adam_step: state tracks " + std::to_string(state.first_moment.size()) + " tensors, got " +
                     std::to_string(params.size()));
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(state.beta1, t);
  const double correction2 = 1.0 - std::pow(state.beta2, t);
  const float b1 = static_cast<float>(state.beta1);
  const float b2 = static_cast<float>(state.beta2);
  const float step_size = static_cast<float>(lr / correction1);
  const float inv_sqrt_c2 = static_cast<float>(1.0 / std::sqrt(correction2));
  const float eps = static_cast<float>(state.eps);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    if (m.size() != params[i].numel() || v.size() != params[i].numel()) {
      throw ShapeError("adam_step: moment size mismatch for parameter " + std::to_string(i) + " " +
                       shape_str(params[i].shape()));
    }
    if (!params[i].has_grad()) continue;
    auto w = params[i].mutable_data();
    const auto g = params[i].grad();
    for (std::size_t j = 0; j < w.size(); ++j) {
      m[j] = b1 * m[j] + (1.0f - b1) * g[j];
      v[j] = b2 * v[j] + (1.0f - b2) * g[j] * g[j];
      w[j] -= step_size * m[j] / (std::sqrt(v[j]) * inv_sqrt_c2 + eps);
    }
  }
}

// ---------------------------------------------------------------------------
// evaluation

Accuracy score_predictions(const Tensor& logits, const TokenBatch& targets) {
  const std::size_t vocab = logits.dim(-1);
  if (logits.numel() != targets.ids.size() * vocab) {
    throw ShapeError("score_predictions: logits " + shape_str(logits.shape()) + " do not match targets");
  }
  Accuracy acc;
  std::size_t correct_tokens = 0;
  std::size_t correct_rows = 0;
  const auto data = logits.data();
  for (std::size_t b = 0; b < targets.batch; ++b) {
    bool all = true;
    for (std::size_t t = 0; t < targets.len; ++t) {
      const float* row = data.data() + (b * targets.len + t) * vocab;
      const auto pred = static_cast<std::int32_t>(std::max_element(row, row + vocab) - row);
      if (pred == targets.at(b, t)) {
        ++correct_tokens;
      } else {
        all = false;
      }
    }
    if (all) ++correct_rows;
  }
  acc.tokens = targets.ids.size();
  acc.sequences = targets.batch;
  acc.token = static_cast<double>(correct_tokens) / static_cast<double>(acc.tokens);
  acc.sequence = static_cast<double>(correct_rows) / static_cast<double>(acc.sequences);
  return acc;
}

Accuracy evaluate_accuracy(Model& model, const std::vector<SupervisedBatch>& dataset) {
  if (dataset.empty()) throw ConfigError("evaluate_accuracy: empty dataset");
  const bool was_training = model.training();
  model.set_training(false);
  NoGradScope<float> no_grad;
  double tokens_ok = 0.0;
  double rows_ok = 0.0;
  Accuracy total;
  for (const auto& batch : dataset) {
    const auto acc = score_predictions(model.forward(batch.inputs), batch.targets);
    tokens_ok += acc.token * static_cast<double>(acc.tokens);
    rows_ok += acc.sequence * static_cast<double>(acc.sequences);
    total.tokens += acc.tokens;
    total.sequences += acc.sequences;
  }
  model.set_training(was_training);
  total.token = tokens_ok / static_cast<double>(total.tokens);
  total.sequence = rows_ok / static_cast<double>(total.sequences);
  return total;
}

double evaluate_loss(Model& model, const std::vector<SupervisedBatch>& dataset) {
  if (dataset.empty()) throw ConfigError("evaluate_loss: empty dataset");
  const bool was_training = model.training();
  model.set_training(false);
  NoGradScope<float> no_grad;
  double total = 0.0;
  std::size_t count = 0;
  for (const auto& batch : dataset) {
    const auto loss = cross_entropy_loss(model.forward(batch.inputs), batch.targets.ids);
    total += static_cast<double>(loss.item()) * static_cast<double>(batch.targets.ids.size());
    count += batch.targets.ids.size();
  }
  model.set_training(was_training);
  return total / static_cast<double>(count);
}

// ---------------------------------------------------------------------------
// tasks

std::string task_name(TaskKind kind) {
  switch (kind) {
    case TaskKind::Reverse: return "reverse";
    case TaskKind::Sort: return "sort";
    case TaskKind::Swap: return "swap";
    case TaskKind::Sub: return "sub";
    case TaskKind::Copy: return "copy";
    case TaskKind::Numbers: return "numbers";
    case TaskKind::Chars: return "chars";
  }
  return "?";
}

TaskKind parse_task(const std::string& name) {
  for (auto kind : {TaskKind::Reverse, TaskKind::Sort, TaskKind::Swap, TaskKind::Sub, TaskKind::Copy,
                    TaskKind::Numbers, TaskKind::Chars}) {
    if (task_name(kind) == name) return kind;
  }
  throw ConfigError("unknown task '" + name + "' (expected reverse, sort, swap, sub, copy, numbers or chars)");
}

bool is_synthetic(TaskKind kind) { return kind != TaskKind::Numbers && kind != TaskKind::Chars; }

void TaskSpec::validate() const {
  if (seq_len == 0) throw ConfigError("seq_len must be at least 1");
  if (is_synthetic(kind)) {
    SyntheticTask{parse_synthetic(task_name(kind)), seq_len}.validate();
  } else if (!(val_fraction > 0.0 && val_fraction < 1.0)) {
    throw ConfigError("val_fraction must lie in (0, 1)");
  }
  if (kind == TaskKind::Chars && corpus_path.empty()) throw ConfigError("task 'chars' needs a corpus path");
}

TaskData prepare_task(const TaskSpec& spec) {
  spec.validate();
  TaskData data;
  data.spec = spec;
  if (is_synthetic(spec.kind)) {
    data.synthetic = SyntheticTask{parse_synthetic(task_name(spec.kind)), spec.seq_len};
    for (int digit = 0; digit < 10; ++digit) data.vocab.push_back(std::to_string(digit));
    return data;
  }
  const Corpus corpus = spec.kind == TaskKind::Numbers ? build_number_corpus() : char_corpus_from_file(spec.corpus_path);
  auto [train, val] = train_val_split(corpus, spec.val_fraction);
  if (val.ids.size() < spec.seq_len + 1 || train.ids.size() < spec.seq_len + 1) {
    throw ConfigError("corpus too short for seq_len " + std::to_string(spec.seq_len));
  }
  data.vocab = corpus.vocab;
  data.train = std::move(train);
  data.val = std::move(val);
  return data;
}

std::vector<SupervisedBatch> validation_set(const TaskData& data, const TrainConfig& train) {
  std::vector<SupervisedBatch> out;
  const std::uint64_t val_seed = derive_seed(data.spec.seed, 0x7a1);
  if (data.synthetic) {
    for (std::size_t i = 0; i < train.eval_batches; ++i) {
      out.push_back(make_synthetic_batch(*data.synthetic, train.batch_size, val_seed, i * train.batch_size));
    }
    return out;
  }
  Rng rng(val_seed);
  for (std::size_t i = 0; i < train.eval_batches; ++i) {
    out.push_back(make_lm_batch(data.val->ids, train.batch_size, data.spec.seq_len, rng));
  }
  return out;
}

// ---------------------------------------------------------------------------
// run

RunReport train_run(Model& model, const TaskData& data, const TrainConfig& train, const RunHooks& hooks) {
  train.validate();
  const auto& mc = model.config();
  if (mc.vocab_size != data.vocab_size()) {
    throw ConfigError("model vocab_size " + std::to_string(mc.vocab_size) + " does not match task vocabulary " +
                      std::to_string(data.vocab_size()));
  }
  if (mc.mode != data.mode()) {
    throw ConfigError("task '" + task_name(data.spec.kind) + "' needs mode " + mode_name(data.mode()));
  }
  if (mc.max_len < data.spec.seq_len) {
    throw ConfigError("max_len " + std::to_string(mc.max_len) + " is shorter than seq_len " +
                      std::to_string(data.spec.seq_len));
  }

  RunReport report;
  report.task = task_name(data.spec.kind);
  report.variant = mc.attention.name();
  report.seed = train.seed;
  report.params = model.param_count();
  report.cost = count_cost(mc.attention, data.spec.seq_len, mc.d_model, mc.heads);
  if (data.spec.kind == TaskKind::Numbers) report.corpus_note = kNumberCorpusConvention;
  if (data.spec.kind == TaskKind::Chars) report.corpus_note = "chars from " + data.spec.corpus_path;

  const auto val_set = validation_set(data, train);
  auto params = model.parameters();
  auto adam = AdamState::for_parameters(params);
  Rng lm_rng(derive_seed(train.seed, 0x1f3));
  const std::uint64_t train_seed = derive_seed(train.seed, 0x5e7);

  const auto log = [&](std::size_t step, const char* split, double loss, double lr) {
    LossRecord rec{step, split, loss, lr};
    report.records.push_back(rec);
    if (hooks.on_record) hooks.on_record(rec);
  };
  const auto check_finite = [&](double loss, std::size_t step, const char* split) {
    if (!std::isfinite(loss)) {
      throw DivergenceError("non-finite " + std::string(split) + " loss at step " + std::to_string(step), report);
    }
  };

  Tape tape;
  model.zero_grad();
  for (std::size_t step = 0; step < train.max_steps; ++step) {
    const double lr = cosine_warmup_lr(step, train.warmup_steps, train.max_steps, train.base_lr);
    const auto batch = data.synthetic
                           ? make_synthetic_batch(*data.synthetic, train.batch_size, train_seed, step * train.batch_size)
                           : make_lm_batch(data.train->ids, train.batch_size, data.spec.seq_len, lm_rng);
    model.set_training(true);
    double loss_value = 0.0;
    {
      TapeScope<float> scope(tape);
      const auto loss = cross_entropy_loss(model.forward(batch.inputs), batch.targets.ids);
      loss_value = loss.item();
      check_finite(loss_value, step, "train");
      backward(loss);
    }
    tape.reset();
    if (step % train.eval_interval == 0) {
      const double val_loss = evaluate_loss(model, val_set);
      check_finite(val_loss, step, "val");
      if (step == 0) report.initial_val_loss = val_loss;
      log(step, "train", loss_value, lr);
      log(step, "val", val_loss, lr);
    }
    if (train.grad_clip_norm > 0.0) {
      try {
        clip_grad_norm(params, train.grad_clip_norm);
      } catch (const NumericError& e) {
        throw DivergenceError(std::string(e.what()) + " at step " + std::to_string(step), report);
      }
    }
    adam_step(params, adam, lr);
    model.zero_grad();
    report.steps_completed = step + 1;
  }
  model.set_training(false);
  report.final_val_loss = evaluate_loss(model, val_set);
  check_finite(report.final_val_loss, train.max_steps, "val");
  log(train.max_steps, "val", report.final_val_loss, 0.0);

  report.accuracy = evaluate_accuracy(model, val_set);

  const auto& first = val_set.front().inputs;
  report.attention_input = TokenBatch::single(std::vector<std::int32_t>(first.ids.begin(), first.ids.begin() +
                                                                            static_cast<std::ptrdiff_t>(first.len)));
  {
    NoGradScope<float> no_grad;
    model.forward(report.attention_input, &report.attention);
  }
  return report;
}

RunReport train_run(const ModelConfig& model_config, const TaskSpec& task, const TrainConfig& train,
                    const RunHooks& hooks) {
  const auto data = prepare_task(task);
  Model model(model_config);
  return train_run(model, data, train, hooks);
}

}  // namespace kvt
