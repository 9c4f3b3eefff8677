#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <numbers>

#include "kvt/training.hpp"
#include "test_util.hpp"

namespace kvt {
namespace {

using test_support::max_grad_error;
using test_support::random_tensor;

TEST(Schedule, Examples) {
  EXPECT_EQ(cosine_warmup_lr(0, 5, 100, 1e-3), 0.0);
  EXPECT_NEAR(cosine_warmup_lr(100, 5, 100, 1e-3), 0.0, 1e-18);
  const double expected = 1e-3 * 0.5 * (1.0 + std::cos(std::numbers::pi * 5.0 / 100.0));
  EXPECT_DOUBLE_EQ(cosine_warmup_lr(5, 5, 100, 1e-3), expected);
  EXPECT_NEAR(expected, 9.938e-4, 1e-7);
  EXPECT_THROW(cosine_warmup_lr(0, 5, 0, 1e-3), ConfigError);
  EXPECT_THROW(cosine_warmup_lr(101, 5, 100, 1e-3), ConfigError);
}

TEST(Schedule, ContinuousAndNonNegative) {
  Rng rng(1);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t max_steps = 2 + rng.below(5000);
    const std::size_t warmup = 1 + rng.below(max_steps - 1);
    const double base = 1e-4 + rng.uniform();
    double prev = cosine_warmup_lr(0, warmup, max_steps, base);
    for (std::size_t s = 1; s <= max_steps; ++s) {
      const double lr = cosine_warmup_lr(s, warmup, max_steps, base);
      ASSERT_GE(lr, 0.0);
      ASSERT_LE(lr, base);
      // Largest single-step change of either factor is bounded by base / warmup + base * pi / max_steps.
      ASSERT_LE(std::abs(lr - prev), base / static_cast<double>(warmup) + base * 4.0 / static_cast<double>(max_steps));
      prev = lr;
    }
    ASSERT_NEAR(prev, 0.0, 1e-15);
    const double left = base * 0.5 * (1.0 + std::cos(std::numbers::pi * static_cast<double>(warmup) / max_steps));
    ASSERT_NEAR(cosine_warmup_lr(warmup, warmup, max_steps, base), left, 1e-15);
  }
}

TEST(CrossEntropy, Examples) {
  auto uniform = Tensor64::zeros({1, 2, 10});
  const std::vector<std::int32_t> targets{3, 7};
  EXPECT_NEAR(cross_entropy_loss<double>(uniform, targets).item(), std::log(10.0), 1e-12);

  std::vector<double> sharp(20, 0.0);
  sharp[3] = 1e4;
  sharp[17] = 1e4;
  EXPECT_NEAR(cross_entropy_loss<double>(Tensor64({1, 2, 10}, sharp), targets).item(), 0.0, 1e-12);

  const std::vector<std::int32_t> bad{3, 10};
  EXPECT_THROW(cross_entropy_loss<double>(uniform, bad), IndexError);
  const std::vector<std::int32_t> short_targets{3};
  EXPECT_THROW(cross_entropy_loss<double>(uniform, short_targets), ShapeError);
}

TEST(CrossEntropy, MatchesPerPositionOracle) {
  Rng rng(2);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t rows = 1 + rng.below(12), vocab = 2 + rng.below(20);
    auto logits = random_tensor<double>({rows, vocab}, rng, false, 3.0);
    std::vector<std::int32_t> targets(rows);
    for (auto& t : targets) t = static_cast<std::int32_t>(rng.below(vocab));
    double oracle = 0.0;
    for (std::size_t r = 0; r < rows; ++r) {
      double z = 0.0;
      for (std::size_t v = 0; v < vocab; ++v) z += std::exp(logits.data()[r * vocab + v]);
      oracle += std::log(z) - logits.data()[r * vocab + static_cast<std::size_t>(targets[r])];
    }
    ASSERT_NEAR(cross_entropy_loss<double>(logits, targets).item(), oracle / static_cast<double>(rows), 1e-9);
  }
}

TEST(CrossEntropy, GradientMatchesFiniteDifferences) {
  Rng rng(3);
  auto logits = random_tensor<double>({2, 3, 5}, rng, true);
  const std::vector<std::int32_t> targets{0, 4, 2, 2, 1, 3};
  EXPECT_LT(max_grad_error({logits}, [&] { return cross_entropy_loss<double>(logits, targets); }), 1e-6);
}

std::vector<Tensor> params_with_grads(const std::vector<std::vector<float>>& grads) {
  std::vector<Tensor> out;
  for (const auto& g : grads) {
    Tensor t({g.size()}, std::vector<float>(g.size(), 1.0f), true);
    auto m = t.mutable_grad();
    std::copy(g.begin(), g.end(), m.begin());
    out.push_back(t);
  }
  return out;
}

TEST(Clip, Examples) {
  auto small = params_with_grads({{3.0f, 0.0f}});
  EXPECT_DOUBLE_EQ(clip_grad_norm(small, 5.0), 3.0);
  EXPECT_EQ(small[0].grad()[0], 3.0f);

  auto big = params_with_grads({{6.0f}, {8.0f}});
  EXPECT_DOUBLE_EQ(clip_grad_norm(big, 5.0), 10.0);
  EXPECT_FLOAT_EQ(big[0].grad()[0], 3.0f);
  EXPECT_FLOAT_EQ(big[1].grad()[0], 4.0f);

  auto nan = params_with_grads({{1.0f}, {std::numeric_limits<float>::quiet_NaN()}});
  EXPECT_THROW(clip_grad_norm(nan, 5.0), NumericError);
  EXPECT_THROW(clip_grad_norm(big, 0.0), ConfigError);
}

TEST(Clip, NeverIncreasesNormAndKeepsDirection) {
  Rng rng(4);
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<std::vector<float>> grads(1 + rng.below(4));
    for (auto& g : grads) {
      g.resize(1 + rng.below(10));
      for (auto& v : g) v = static_cast<float>(rng.normal(0.0, 3.0));
    }
    auto params = params_with_grads(grads);
    const double before = global_grad_norm(params);
    const double max_norm = 0.1 + 10.0 * rng.uniform();
    clip_grad_norm(params, max_norm);
    const double after = global_grad_norm(params);
    ASSERT_LE(after, before * (1.0 + 1e-6));
    ASSERT_NEAR(after, std::min(before, max_norm), 1e-5 * std::max(1.0, before));
    const double factor = after / before;
    for (std::size_t i = 0; i < grads.size(); ++i)
      for (std::size_t j = 0; j < grads[i].size(); ++j) {
        ASSERT_NEAR(params[i].grad()[j], grads[i][j] * factor, 1e-5);
      }
  }
}

TEST(Adam, ZeroGradientIsNoOp) {
  auto params = params_with_grads({{0.0f, 0.0f}, {0.0f}});
  auto state = AdamState::for_parameters(params);
  for (int i = 0; i < 3; ++i) adam_step(params, state, 1e-2);
  EXPECT_EQ(params[0].data()[0], 1.0f);
  EXPECT_EQ(params[1].data()[0], 1.0f);
  EXPECT_EQ(state.step, 3u);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  auto params = params_with_grads({{1.0f, 1.0f, 1.0f}});
  auto state = AdamState::for_parameters(params);
  adam_step(params, state, 1e-2);
  // m_hat = 1, v_hat = 1, update = lr * 1 / (1 + 1e-8)
  for (float v : params[0].data()) EXPECT_NEAR(v, 1.0f - 1e-2f, 1e-7);
}

TEST(Adam, MatchesHandRolledUpdate) {
  Rng rng(5);
  std::vector<float> grad(6);
  for (auto& g : grad) g = static_cast<float>(rng.normal());
  auto params = params_with_grads({grad});
  auto state = AdamState::for_parameters(params);
  std::vector<double> theta(6, 1.0), m(6, 0.0), v(6, 0.0);
  for (int t = 1; t <= 5; ++t) {
    adam_step(params, state, 1e-3);
    for (std::size_t i = 0; i < 6; ++i) {
      m[i] = 0.9 * m[i] + 0.1 * grad[i];
      v[i] = 0.999 * v[i] + 0.001 * grad[i] * grad[i];
      const double mh = m[i] / (1.0 - std::pow(0.9, t)), vh = v[i] / (1.0 - std::pow(0.999, t));
      theta[i] -= 1e-3 * mh / (std::sqrt(vh) + 1e-8);
    }
  }
  for (std::size_t i = 0; i < 6; ++i) EXPECT_NEAR(params[0].data()[i], theta[i], 1e-6);
}

TEST(Adam, ShapeMismatch) {
  auto params = params_with_grads({{1.0f}});
  auto state = AdamState::for_parameters(params_with_grads({{1.0f, 2.0f}}));
  EXPECT_THROW(adam_step(params, state, 1e-3), ShapeError);
  auto more = params_with_grads({{1.0f}, {1.0f}});
  EXPECT_THROW(adam_step(more, state, 1e-3), ShapeError);
}

TEST(Accuracy, Counting) {
  // Logits whose argmax is the target except one position.
  const std::size_t n = 4, len = 5, v = 10;
  TokenBatch targets{n, len, std::vector<std::int32_t>(n * len)};
  std::vector<float> logits(n * len * v, 0.0f);
  for (std::size_t i = 0; i < n * len; ++i) {
    targets.ids[i] = static_cast<std::int32_t>(i % v);
    logits[i * v + i % v] = 1.0f;
  }
  const Tensor perfect({n, len, v}, logits);
  const auto a = score_predictions(perfect, targets);
  EXPECT_EQ(a.token, 1.0);
  EXPECT_EQ(a.sequence, 1.0);

  logits[7 * v + 7] = 0.0f;
  logits[7 * v + 2] = 2.0f;
  const auto b = score_predictions(Tensor({n, len, v}, logits), targets);
  EXPECT_DOUBLE_EQ(b.token, 1.0 - 1.0 / (n * len));
  EXPECT_DOUBLE_EQ(b.sequence, 1.0 - 1.0 / n);
  EXPECT_LE(b.sequence, b.token);
}

TEST(Tasks, NamesRoundTrip) {
  for (auto k : {TaskKind::Reverse, TaskKind::Sort, TaskKind::Swap, TaskKind::Sub, TaskKind::Copy, TaskKind::Numbers,
                 TaskKind::Chars}) {
    EXPECT_EQ(parse_task(task_name(k)), k);
  }
  EXPECT_THROW(parse_task("translate"), ConfigError);
}

TaskSpec spec_of(TaskKind kind, std::size_t len) {
  TaskSpec spec;
  spec.kind = kind;
  spec.seq_len = len;
  return spec;
}

ModelConfig tiny_model(const TaskData& data) {
  ModelConfig c;
  c.mode = data.mode();
  c.vocab_size = data.vocab_size();
  c.d_model = 16;
  c.heads = 2;
  c.layers = 1;
  c.max_len = data.spec.seq_len;
  c.attention = AttentionKind::kv_pos(2);
  return c;
}

TrainConfig short_train() {
  TrainConfig t;
  t.max_steps = 30;
  t.batch_size = 16;
  t.eval_interval = 10;
  t.eval_batches = 2;
  t.seed = 7;
  return t;
}

TEST(TrainRun, InitialLossNearUniformAndRecordsOrdered) {
  const auto spec = spec_of(TaskKind::Sort, 8);
  const auto data = prepare_task(spec);
  Model model(tiny_model(data));
  const auto report = train_run(model, data, short_train());
  EXPECT_NEAR(report.initial_val_loss, std::log(10.0), 0.3);
  EXPECT_NEAR(report.records.front().loss, std::log(10.0), 0.3);
  EXPECT_EQ(report.steps_completed, 30u);
  ASSERT_EQ(report.records.size(), 7u);
  EXPECT_EQ(report.records.back().step, 30u);
  EXPECT_EQ(report.records.back().split, "val");
  for (std::size_t i = 1; i < report.records.size(); ++i) {
    const auto& a = report.records[i - 1];
    const auto& b = report.records[i];
    EXPECT_TRUE(a.step < b.step || (a.step == b.step && a.split == "train" && b.split == "val"));
  }
  EXPECT_EQ(report.attention.size(), 1u);
  EXPECT_EQ(report.attention_input.len, 8u);
  EXPECT_LE(report.accuracy.sequence, report.accuracy.token);
}

TEST(TrainRun, IdenticalConfigsGiveIdenticalReports) {
  const auto spec = spec_of(TaskKind::Numbers, 12);
  auto run = [&] {
    const auto data = prepare_task(spec);
    auto c = tiny_model(data);
    c.dropout = 0.1;
    Model model(c);
    return train_run(model, data, short_train());
  };
  const auto a = run();
  const auto b = run();
  ASSERT_EQ(a.records.size(), b.records.size());
  for (std::size_t i = 0; i < a.records.size(); ++i) {
    EXPECT_EQ(a.records[i].loss, b.records[i].loss);
    EXPECT_EQ(a.records[i].lr, b.records[i].lr);
  }
  EXPECT_EQ(a.accuracy.token, b.accuracy.token);
  EXPECT_EQ(a.corpus_note, kNumberCorpusConvention);
}

TEST(TrainRun, RejectsMismatchedModel) {
  const auto data = prepare_task(spec_of(TaskKind::Copy, 8));
  auto c = tiny_model(data);
  c.vocab_size = 11;
  Model wrong_vocab(c);
  EXPECT_THROW(train_run(wrong_vocab, data, short_train()), ConfigError);
  c = tiny_model(data);
  c.mode = ModelMode::CausalLM;
  Model wrong_mode(c);
  EXPECT_THROW(train_run(wrong_mode, data, short_train()), ConfigError);
}

TEST(TrainRun, DivergenceCarriesLastGoodReport) {
  const auto data = prepare_task(spec_of(TaskKind::Copy, 8));
  auto c = tiny_model(data);
  Model model(c);
  auto train = short_train();
  train.base_lr = 1e30;
  train.grad_clip_norm = 0.0;
  train.warmup_steps = 1;
  train.eval_interval = 1;
  try {
    train_run(model, data, train);
    GTEST_SKIP() << "did not diverge";
  } catch (const DivergenceError& e) {
    EXPECT_FALSE(e.report.records.empty());
    for (const auto& r : e.report.records) EXPECT_TRUE(std::isfinite(r.loss));
  } catch (const NumericError&) {
    // Overflow surfaced inside a tensor op before the loss check.
  }
}

}  // namespace
}  // namespace kvt
