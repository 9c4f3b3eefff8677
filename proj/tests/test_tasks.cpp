#include <gtest/gtest.h>

#include <algorithm>
#include <fstream>
#include <numeric>
#include <set>

#include "kvt/errors.hpp"
#include "kvt/tasks.hpp"

namespace kvt {
namespace {

const SyntheticKind kKinds[] = {SyntheticKind::Reverse, SyntheticKind::Sort, SyntheticKind::Swap, SyntheticKind::Sub,
                                SyntheticKind::Copy};

// Straightforward re-implementations, written index by index.
Digits naive_transform(SyntheticKind kind, const Digits& x) {
  const std::size_t n = x.size();
  Digits y(n);
  switch (kind) {
    case SyntheticKind::Reverse:
      for (std::size_t i = 0; i < n; ++i) y[i] = x[n - 1 - i];
      break;
    case SyntheticKind::Sort: {
      std::size_t counts[10] = {};
      for (auto v : x) ++counts[v];
      std::size_t at = 0;
      for (std::int32_t v = 0; v < 10; ++v)
        for (std::size_t c = 0; c < counts[v]; ++c) y[at++] = v;
      break;
    }
    case SyntheticKind::Swap:
      for (std::size_t i = 0; i < n / 2; ++i) {
        y[i] = x[n / 2 + i];
        y[n / 2 + i] = x[i];
      }
      break;
    case SyntheticKind::Sub:
      for (std::size_t i = 0; i < n; ++i) y[i] = 9 - x[i];
      break;
    case SyntheticKind::Copy:
      y = x;
      break;
  }
  return y;
}

TEST(Synthetic, PaperExamples) {
  const Digits x{4, 3, 9, 8, 1};
  EXPECT_EQ(apply_transform(SyntheticKind::Reverse, x), (Digits{1, 8, 9, 3, 4}));
  EXPECT_EQ(apply_transform(SyntheticKind::Sort, x), (Digits{1, 3, 4, 8, 9}));
  EXPECT_EQ(apply_transform(SyntheticKind::Swap, Digits{4, 3, 9, 8, 1, 7}), (Digits{8, 1, 7, 4, 3, 9}));
  EXPECT_EQ(apply_transform(SyntheticKind::Sub, x), (Digits{5, 6, 0, 1, 8}));
  EXPECT_EQ(apply_transform(SyntheticKind::Copy, x), x);
}

TEST(Synthetic, SwapRejectsOddLength) {
  EXPECT_THROW((SyntheticTask{SyntheticKind::Swap, 15}.validate()), ConfigError);
  EXPECT_THROW((SyntheticTask{SyntheticKind::Copy, 0}.validate()), ConfigError);
  Rng rng(1);
  EXPECT_THROW(gen_synthetic({SyntheticKind::Swap, 5}, rng), ConfigError);
  EXPECT_NO_THROW((SyntheticTask{SyntheticKind::Reverse, 15}.validate()));
}

TEST(Synthetic, NameRoundTrip) {
  for (auto kind : kKinds) EXPECT_EQ(parse_synthetic(synthetic_name(kind)), kind);
  EXPECT_THROW(parse_synthetic("shuffle"), ConfigError);
}

TEST(Synthetic, MatchesNaiveOracle) {
  Rng rng(2);
  for (auto kind : kKinds) {
    for (int i = 0; i < 1000; ++i) {
      const std::size_t len = 2 * (1 + rng.below(12));
      const auto [input, target] = gen_synthetic({kind, len}, rng);
      ASSERT_EQ(input.size(), len);
      for (auto v : input) ASSERT_TRUE(v >= 0 && v <= 9);
      ASSERT_EQ(target, naive_transform(kind, input)) << synthetic_name(kind);
    }
  }
}

TEST(Synthetic, InvolutionsAndIdempotence) {
  Rng rng(3);
  for (int i = 0; i < 1000; ++i) {
    Digits x(2 * (1 + rng.below(10)));
    for (auto& v : x) v = static_cast<std::int32_t>(rng.below(10));
    for (auto kind : {SyntheticKind::Reverse, SyntheticKind::Sub, SyntheticKind::Swap}) {
      ASSERT_EQ(apply_transform(kind, apply_transform(kind, x)), x) << synthetic_name(kind);
    }
    const auto sorted = apply_transform(SyntheticKind::Sort, x);
    ASSERT_EQ(apply_transform(SyntheticKind::Sort, sorted), sorted);
  }
}

TEST(Synthetic, BatchesAreSeededPerSample) {
  const SyntheticTask task{SyntheticKind::Reverse, 6};
  const auto a = make_synthetic_batch(task, 4, 7, 0);
  const auto b = make_synthetic_batch(task, 2, 7, 2);
  ASSERT_EQ(a.inputs.batch, 4u);
  ASSERT_EQ(a.inputs.len, 6u);
  EXPECT_TRUE(std::equal(b.inputs.ids.begin(), b.inputs.ids.end(), a.inputs.ids.begin() + 12));
  EXPECT_EQ(make_synthetic_batch(task, 4, 7, 0).inputs.ids, a.inputs.ids);
  EXPECT_NE(make_synthetic_batch(task, 4, 8, 0).inputs.ids, a.inputs.ids);
}

std::string join(const std::vector<std::string>& words) {
  std::string out;
  for (const auto& w : words) out += (out.empty() ? "" : " ") + w;
  return out;
}

TEST(NumberWords, Examples) {
  EXPECT_EQ(join(number_to_words(13)), "thirteen");
  EXPECT_EQ(join(number_to_words(21)), "twenty one");
  EXPECT_EQ(join(number_to_words(9999)), "nine thousand nine hundred ninety nine");
  EXPECT_EQ(join(number_to_words(100)), "one hundred");
  EXPECT_EQ(join(number_to_words(1010)), "one thousand ten");
  EXPECT_EQ(join(number_to_words(7005)), "seven thousand five");
  EXPECT_THROW(number_to_words(0), ConfigError);
  EXPECT_THROW(number_to_words(10000), ConfigError);
}

TEST(NumberCorpus, CountsAndVocabulary) {
  const auto corpus = build_number_corpus();
  const std::set<std::string> expected{
      ".",       "one",      "two",      "three",    "four",      "five",     "six",     "seven",
      "eight",   "nine",     "ten",      "eleven",   "twelve",    "thirteen", "fourteen", "fifteen",
      "sixteen", "seventeen", "eighteen", "nineteen", "twenty",   "thirty",   "forty",   "fifty",
      "sixty",   "seventy",  "eighty",   "ninety",   "hundred",   "thousand"};
  EXPECT_EQ(corpus.vocab.size(), 30u);
  EXPECT_EQ(std::set<std::string>(corpus.vocab.begin(), corpus.vocab.end()), expected);
  EXPECT_EQ(corpus.ids.size(), 63099u);
  EXPECT_LE(std::abs(static_cast<double>(corpus.ids.size()) - 63095.0) / 63095.0, 0.001);
  EXPECT_EQ(detokenize(corpus, {corpus.ids.begin(), corpus.ids.begin() + 4}, " "), "one . two .");
  for (auto id : corpus.ids) ASSERT_LT(static_cast<std::size_t>(id), corpus.vocab.size());
}

// Word count per number from digit structure, without spelling anything out.
TEST(NumberCorpus, TokenCountMatchesDigitArithmetic) {
  auto below_hundred = [](int n) { return n == 0 ? 0 : (n < 20 || n % 10 == 0) ? 1 : 2; };
  std::size_t total = 0;
  for (int n = 1; n <= 9999; ++n) {
    const int thousands = n / 1000, hundreds = (n / 100) % 10, rest = n % 100;
    total += (thousands ? 2 : 0) + (hundreds ? 2 : 0) + below_hundred(rest) + 1;
  }
  EXPECT_EQ(build_number_corpus().ids.size(), total);
}

TEST(CharCorpus, TokenizeExamples) {
  const auto c = char_tokenize("aba");
  EXPECT_EQ(c.vocab, (std::vector<std::string>{"a", "b"}));
  EXPECT_EQ(c.ids, (std::vector<std::int32_t>{0, 1, 0}));
  EXPECT_THROW(char_tokenize(""), ConfigError);
}

TEST(CharCorpus, RoundTripProperty) {
  Rng rng(4);
  for (int trial = 0; trial < 200; ++trial) {
    std::string text(1 + rng.below(200), ' ');
    for (auto& ch : text) ch = static_cast<char>(rng.below(256));
    const auto c = char_tokenize(text);
    ASSERT_EQ(c.ids.size(), text.size());
    ASSERT_TRUE(std::is_sorted(c.vocab.begin(), c.vocab.end(), [](const auto& a, const auto& b) {
      return static_cast<unsigned char>(a[0]) < static_cast<unsigned char>(b[0]);
    }));
    ASSERT_EQ(detokenize(c, c.ids), text);
  }
}

TEST(CharCorpus, ReadsFileAndReportsMissing) {
  const auto path = std::filesystem::temp_directory_path() / "kvt_chars.txt";
  {
    std::ofstream(path) << "hello\nworld\n";
  }
  const auto c = char_corpus_from_file(path);
  EXPECT_EQ(c.ids.size(), 12u);
  EXPECT_EQ(c.source, CorpusSource::CharFile);
  std::filesystem::remove(path);
  EXPECT_THROW(char_corpus_from_file(path), IoError);
}

TEST(Split, Examples) {
  Corpus c;
  c.vocab = {"x"};
  c.ids.assign(10, 0);
  std::iota(c.ids.begin(), c.ids.end(), 0);
  const auto [train, val] = train_val_split(c, 0.9);
  EXPECT_EQ(train.ids.size(), 9u);
  EXPECT_EQ(val.ids.size(), 1u);
  auto joined = train.ids;
  joined.insert(joined.end(), val.ids.begin(), val.ids.end());
  EXPECT_EQ(joined, c.ids);
  EXPECT_THROW(train_val_split(c, 0.05), ConfigError);
  EXPECT_THROW(train_val_split(c, 1.0), ConfigError);
  EXPECT_THROW(train_val_split(c, 0.0), ConfigError);

  // Character count of the reference Shakespeare file at 0.9.
  c.ids.assign(1115394, 0);
  const auto [big_train, big_val] = train_val_split(c, 0.9);
  EXPECT_EQ(big_train.ids.size(), 1003854u);
  EXPECT_EQ(big_val.ids.size(), 111540u);
}

TEST(LmBatch, TargetsAreShiftedInputs) {
  std::vector<std::int32_t> ids(100);
  std::iota(ids.begin(), ids.end(), 0);
  Rng rng(5);
  const auto batch = make_lm_batch(ids, 8, 16, rng);
  ASSERT_EQ(batch.inputs.batch, 8u);
  ASSERT_EQ(batch.inputs.len, 16u);
  for (std::size_t b = 0; b < 8; ++b)
    for (std::size_t t = 0; t < 16; ++t) {
      EXPECT_EQ(batch.targets.at(b, t), batch.inputs.at(b, t) + 1);
      EXPECT_LE(batch.targets.at(b, t), 99);
    }
  std::vector<std::int32_t> tiny(10, 0);
  EXPECT_THROW(make_lm_batch(tiny, 1, 10, rng), ConfigError);
}

}  // namespace
}  // namespace kvt
