#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "kvt/model.hpp"
#include "kvt/training.hpp"
#include "test_util.hpp"

namespace kvt {
namespace {

using test_support::max_grad_error;

ModelConfig small_config(AttentionKind kind, ModelMode mode = ModelMode::EncoderClassifier) {
  ModelConfig c;
  c.mode = mode;
  c.vocab_size = 10;
  c.d_model = 16;
  c.heads = 2;
  c.layers = 2;
  c.max_len = 8;
  c.attention = kind;
  c.seed = 3;
  return c;
}

TokenBatch random_tokens(std::size_t batch, std::size_t len, std::size_t vocab, Rng& rng) {
  TokenBatch t{batch, len, std::vector<std::int32_t>(batch * len)};
  for (auto& id : t.ids) id = static_cast<std::int32_t>(rng.below(vocab));
  return t;
}

const AttentionKind kAllKinds[] = {AttentionKind::qkv(), AttentionKind::kv(), AttentionKind::kv_pos(4)};

TEST(ModelConfig, ValidateNamesField) {
  auto c = small_config(AttentionKind::kv());
  c.heads = 3;
  try {
    c.validate();
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("heads"), std::string::npos) << e.what();
  }
  c = small_config(AttentionKind::kv());
  c.dropout = 1.0;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(ModelConfig, MapRoundTrip) {
  auto c = small_config(AttentionKind::kv_pos(7), ModelMode::CausalLM);
  c.dropout = 0.2;
  c.ffn_dim = 40;
  c.learned_input_pos = true;
  EXPECT_EQ(ModelConfig::from_map(c.to_map()), c);
}

TEST(Model, OutputShape) {
  for (const auto& kind : kAllKinds) {
    auto c = small_config(kind);
    c.max_len = 16;
    Model model(c);
    Rng rng(1);
    EXPECT_EQ(model.forward(random_tokens(2, 16, 10, rng)).shape(), (Shape{2, 16, 10}));
  }
}

TEST(Model, InputErrors) {
  Model model(small_config(AttentionKind::kv()));
  EXPECT_THROW(model.forward(TokenBatch::single({1, 10})), IndexError);
  EXPECT_THROW(model.forward(TokenBatch::single({1, -1})), IndexError);
  EXPECT_THROW(model.forward(TokenBatch::single(std::vector<std::int32_t>(9, 0))), CapacityError);
}

TEST(Model, CausalLmIgnoresFutureTokens) {
  Rng rng(2);
  for (const auto& kind : kAllKinds) {
    Model model(small_config(kind, ModelMode::CausalLM));
    for (int trial = 0; trial < 10; ++trial) {
      auto tokens = random_tokens(1, 8, 10, rng);
      const auto base = model.forward(tokens);
      const std::size_t j = rng.below(8);
      auto changed = tokens;
      changed.ids[j] = (changed.ids[j] + 1 + static_cast<std::int32_t>(rng.below(9))) % 10;
      const auto other = model.forward(changed);
      for (std::size_t i = 0; i < 8; ++i) {
        double diff = 0.0;
        for (std::size_t v = 0; v < 10; ++v) {
          diff = std::max(diff, static_cast<double>(std::abs(base.data()[i * 10 + v] - other.data()[i * 10 + v])));
        }
        if (i < j) {
          EXPECT_LE(diff, 1e-6) << kind.name() << " position " << i << " changed by token " << j;
        } else {
          EXPECT_GT(diff, 0.0) << kind.name() << " position " << i << " ignores token " << j;
        }
      }
    }
  }
}

TEST(Model, EncoderSeesWholeSequence) {
  Model model(small_config(AttentionKind::kv()));
  Rng rng(3);
  auto tokens = random_tokens(1, 8, 10, rng);
  const auto base = model.forward(tokens);
  tokens.ids[7] = (tokens.ids[7] + 1) % 10;
  const auto other = model.forward(tokens);
  EXPECT_NE(base.data()[0], other.data()[0]);
}

TEST(Model, ForwardIsDeterministic) {
  Rng rng(4);
  auto tokens = random_tokens(3, 8, 10, rng);
  for (const auto& kind : kAllKinds) {
    Model a(small_config(kind));
    Model b(small_config(kind));
    const auto la = a.forward(tokens);
    const auto lb = a.forward(tokens);
    const auto lc = b.forward(tokens);
    EXPECT_TRUE(std::equal(la.data().begin(), la.data().end(), lb.data().begin()));
    EXPECT_TRUE(std::equal(la.data().begin(), la.data().end(), lc.data().begin()));
  }
}

TEST(Model, ParamCounts) {
  auto base = small_config(AttentionKind::qkv());
  base.d_model = 64;
  base.max_len = 16;
  base.layers = 2;
  auto with = [&](AttentionKind kind) {
    auto c = base;
    c.attention = kind;
    return Model(c).param_count();
  };
  EXPECT_EQ(with(AttentionKind::qkv()) - with(AttentionKind::kv()), 8192u);
  EXPECT_EQ(with(AttentionKind::kv_pos(10)) - with(AttentionKind::kv()), 2u * (16 * 16 * 10 + 10 + 1));

  // Embedding plus learned input positions: V*d + N_max*d.
  auto c = base;
  c.layers = 1;
  const auto fixed = Model(c).param_count();
  c.learned_input_pos = true;
  EXPECT_EQ(Model(c).param_count() - fixed, 16u * 64u);

  // Independent tally of one pre-norm block plus embedding, final norm and head.
  const std::size_t d = 64, f = 256, v = 10;
  const std::size_t block = 2 * d + 4 * d * d + 2 * d + d * f + f + f * d + d;
  EXPECT_EQ(fixed, v * d + block + 2 * d + d * v + v);
}

TEST(Model, FullGradientCheck) {
  Rng rng(5);
  for (const auto& kind : {AttentionKind::qkv(), AttentionKind::kv(), AttentionKind::kv_pos(3)}) {
    for (auto mode : {ModelMode::EncoderClassifier, ModelMode::CausalLM}) {
      ModelConfig c;
      c.mode = mode;
      c.vocab_size = 6;
      c.d_model = 8;
      c.heads = 2;
      c.layers = 1;
      c.max_len = 4;
      c.attention = kind;
      c.seed = 9;
      TransformerModel<double> model(c);
      // Spread the weights so the check is not dominated by a near-linear regime.
      for (auto& p : model.parameters())
        for (auto& v : p.mutable_data()) v += rng.normal(0.0, 0.3);
      const auto tokens = random_tokens(2, 4, 6, rng);
      const auto targets = random_tokens(2, 4, 6, rng);
      const double err = max_grad_error(model.parameters(), [&] {
        return cross_entropy_loss<double>(model.forward(tokens), targets.ids);
      });
      EXPECT_LE(err, 1e-3) << kind.name() << " " << mode_name(mode);
    }
  }
}

TEST(Model, OneLayerOverfitsSingleCopyBatch) {
  auto c = small_config(AttentionKind::kv());
  c.layers = 1;
  c.d_model = 32;
  c.max_len = 8;
  Model model(c);
  const auto batch = make_synthetic_batch({SyntheticKind::Copy, 8}, 16, 11, 0);
  auto params = model.parameters();
  auto state = AdamState::for_parameters(params);
  double loss = 0.0;
  for (int step = 0; step < 500 && !(step > 0 && loss < 0.01); ++step) {
    Tape tape;
    TapeScope<float> scope(tape);
    auto l = cross_entropy_loss<float>(model.forward(batch.inputs), batch.targets.ids);
    loss = l.item();
    backward(l);
    adam_step(params, state, 1e-2);
    model.zero_grad();
  }
  EXPECT_LT(loss, 0.01);
}

TEST(Checkpoint, RoundTripIsBitIdentical) {
  const auto dir = std::filesystem::temp_directory_path() / "kvt_test_ckpt";
  std::filesystem::create_directories(dir);
  const auto path = dir / "model.ckpt";
  for (const auto& kind : kAllKinds) {
    auto c = small_config(kind, ModelMode::CausalLM);
    c.learned_input_pos = true;
    Model model(c);
    // Move away from the seeded init so a fresh model would not match by accident.
    Rng noise(8);
    for (auto& p : model.parameters())
      for (auto& v : p.mutable_data()) v += static_cast<float>(noise.normal(0.0, 1.0));
    save_checkpoint(path, model, {"a", "b"}, "chars");
    const auto ckpt = read_checkpoint(path);
    EXPECT_EQ(ckpt.config, c);
    EXPECT_EQ(ckpt.vocab, (std::vector<std::string>{"a", "b"}));
    EXPECT_EQ(ckpt.task, "chars");
    Model loaded = load_model(ckpt);
    const auto a = model.named_parameters();
    const auto b = loaded.named_parameters();
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      EXPECT_EQ(a[i].first, b[i].first);
      EXPECT_TRUE(std::equal(a[i].second.data().begin(), a[i].second.data().end(), b[i].second.data().begin()));
    }
  }
  std::filesystem::remove_all(dir);
}

TEST(Checkpoint, RejectsForeignFiles) {
  const auto path = std::filesystem::temp_directory_path() / "kvt_not_a_ckpt";
  {
    std::ofstream(path) << "hello";
  }
  EXPECT_THROW(read_checkpoint(path), IoError);
  std::filesystem::remove(path);
  EXPECT_THROW(read_checkpoint(path), IoError);
}

TEST(Generate, Contract) {
  Model lm(small_config(AttentionKind::kv_pos(2), ModelMode::CausalLM));
  Rng rng(6);
  EXPECT_EQ(generate(lm, {1, 2}, 0, 1.0, rng), (std::vector<std::int32_t>{1, 2}));

  Rng r1(1), r2(2);
  const auto a = generate(lm, {3}, 20, 0.0, r1);
  const auto b = generate(lm, {3}, 20, 0.0, r2);
  EXPECT_EQ(a, b);
  EXPECT_EQ(a.size(), 21u);

  const auto sampled = generate(lm, {3, 4, 5}, 30, 1.5, rng);
  for (auto id : sampled) {
    EXPECT_GE(id, 0);
    EXPECT_LT(id, 10);
  }

  EXPECT_THROW(generate(lm, {}, 3, 0.0, rng), ConfigError);
  Model enc(small_config(AttentionKind::kv()));
  EXPECT_THROW(generate(enc, {1}, 3, 0.0, rng), ConfigError);
}

TEST(SinusoidalPositions, KnownValues) {
  const auto p = sinusoidal_positions(3, 4);
  EXPECT_EQ(p[0], 0.0);
  EXPECT_EQ(p[1], 1.0);
  EXPECT_NEAR(p[4], std::sin(1.0), 1e-15);
  EXPECT_NEAR(p[5], std::cos(1.0), 1e-15);
  EXPECT_NEAR(p[6], std::sin(0.01), 1e-15);
  EXPECT_NEAR(p[7], std::cos(0.01), 1e-15);
}

}  // namespace
}  // namespace kvt
