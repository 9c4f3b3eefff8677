#include "kvt/tasks.hpp"

#include <algorithm>
#include <array>
#include <fstream>
#include <iterator>
#include <map>
#include <set>
#include <sstream>

#include "kvt/errors.hpp"

namespace kvt {

std::string synthetic_name(SyntheticKind kind) {
  switch (kind) {
    case SyntheticKind::Reverse: return "reverse";
    case SyntheticKind::Sort: return "sort";
    case SyntheticKind::Swap: return "swap";
    case SyntheticKind::Sub: return "sub";
    case SyntheticKind::Copy: return "copy";
  }
  return "?";
}

SyntheticKind parse_synthetic(const std::string& name) {
  for (auto kind : {SyntheticKind::Reverse, SyntheticKind::Sort, SyntheticKind::Swap, SyntheticKind::Sub,
                    SyntheticKind::Copy}) {
    if (synthetic_name(kind) == name) return kind;
  }
  throw ConfigError("unknown synthetic task '" + name + "'");
}

void SyntheticTask::validate() const {
  if (seq_len == 0) throw ConfigError("seq_len must be at least 1");
  if (kind == SyntheticKind::Swap && seq_len % 2 != 0) {
    throw ConfigError("swap exchanges two equal halves, so seq_len must be even (got " + std::to_string(seq_len) +
                      ")");
  }
}

Digits apply_transform(SyntheticKind kind, const Digits& input) {
  Digits out = input;
  switch (kind) {
    case SyntheticKind::Reverse:
      std::reverse(out.begin(), out.end());
      break;
    case SyntheticKind::Sort:
      std::sort(out.begin(), out.end());
      break;
    case SyntheticKind::Swap:
      if (out.size() % 2 != 0) throw ConfigError("swap needs an even-length list");
      std::rotate(out.begin(), out.begin() + static_cast<std::ptrdiff_t>(out.size() / 2), out.end());
      break;
    case SyntheticKind::Sub:
      for (auto& v : out) v = 9 - v;
      break;
    case SyntheticKind::Copy:
      break;
  }
  return out;
}

std::pair<Digits, Digits> gen_synthetic(const SyntheticTask& task, Rng& rng) {
  task.validate();
  Digits input(task.seq_len);
  for (auto& v : input) v = static_cast<std::int32_t>(rng.below(SyntheticTask::kVocab));
  auto target = apply_transform(task.kind, input);
  return {std::move(input), std::move(target)};
}

SupervisedBatch make_synthetic_batch(const SyntheticTask& task, std::size_t batch_size, std::uint64_t seed,
                                     std::uint64_t first_index) {
  task.validate();
  SupervisedBatch batch;
  batch.inputs.batch = batch.targets.batch = batch_size;
  batch.inputs.len = batch.targets.len = task.seq_len;
  batch.inputs.ids.reserve(batch_size * task.seq_len);
  batch.targets.ids.reserve(batch_size * task.seq_len);
  for (std::size_t i = 0; i < batch_size; ++i) {
    Rng rng(derive_seed(seed, first_index + i));
    auto [input, target] = gen_synthetic(task, rng);
    batch.inputs.ids.insert(batch.inputs.ids.end(), input.begin(), input.end());
    batch.targets.ids.insert(batch.targets.ids.end(), target.begin(), target.end());
  }
  return batch;
}

// ---------------------------------------------------------------------------
// number words

namespace {

constexpr std::array<const char*, 20> kSmall = {
    "",        "one",     "two",       "three",    "four",     "five",    "six",
    "seven",   "eight",   "nine",      "ten",      "eleven",   "twelve",  "thirteen",
    "fourteen", "fifteen", "sixteen", "seventeen", "eighteen", "nineteen"};
constexpr std::array<const char*, 10> kTens = {"",      "",      "twenty",  "thirty", "forty",
                                               "fifty", "sixty", "seventy", "eighty", "ninety"};

}  // namespace

std::vector<std::string> number_to_words(int n) {
  if (n < 1 || n > 9999) throw ConfigError("number_to_words: " + std::to_string(n) + " outside [1, 9999]");
  std::vector<std::string> words;
  if (n >= 1000) {
    words.emplace_back(kSmall[static_cast<std::size_t>(n / 1000)]);
    words.emplace_back("thousand");
    n %= 1000;
  }
  if (n >= 100) {
    words.emplace_back(kSmall[static_cast<std::size_t>(n / 100)]);
    words.emplace_back("hundred");
    n %= 100;
  }
  if (n >= 20) {
    words.emplace_back(kTens[static_cast<std::size_t>(n / 10)]);
    n %= 10;
  }
  if (n > 0) words.emplace_back(kSmall[static_cast<std::size_t>(n)]);
  return words;
}

namespace {

Corpus index_tokens(const std::vector<std::string>& tokens, CorpusSource source) {
  std::set<std::string> distinct(tokens.begin(), tokens.end());
  Corpus corpus;
  corpus.source = source;
  corpus.vocab.assign(distinct.begin(), distinct.end());
  std::map<std::string, std::int32_t> index;
  for (std::size_t i = 0; i < corpus.vocab.size(); ++i) index[corpus.vocab[i]] = static_cast<std::int32_t>(i);
  corpus.ids.reserve(tokens.size());
  for (const auto& t : tokens) corpus.ids.push_back(index.at(t));
  return corpus;
}

}  // namespace

Corpus build_number_corpus() {
  std::vector<std::string> tokens;
  for (int n = 1; n <= 9999; ++n) {
    for (auto& w : number_to_words(n)) tokens.push_back(std::move(w));
    tokens.emplace_back(".");
  }
  return index_tokens(tokens, CorpusSource::NumberWords);
}

Corpus char_tokenize(const std::string& text) {
  if (text.empty()) throw ConfigError("cannot tokenize empty text");
  std::array<bool, 256> present{};
  for (unsigned char c : text) present[c] = true;
  Corpus corpus;
  corpus.source = CorpusSource::CharFile;
  std::array<std::int32_t, 256> index{};
  for (std::size_t c = 0; c < present.size(); ++c) {
    if (!present[c]) continue;
    index[c] = static_cast<std::int32_t>(corpus.vocab.size());
    corpus.vocab.emplace_back(1, static_cast<char>(c));
  }
  corpus.ids.reserve(text.size());
  for (unsigned char c : text) corpus.ids.push_back(index[c]);
  return corpus;
}

Corpus char_corpus_from_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read corpus file " + path.string());
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  auto corpus = char_tokenize(text);
  corpus.origin = path.string();
  return corpus;
}

std::vector<std::int32_t> encode_text(const std::vector<std::string>& vocab, std::string_view text, bool char_level) {
  std::map<std::string, std::int32_t> index;
  for (std::size_t i = 0; i < vocab.size(); ++i) index.emplace(vocab[i], static_cast<std::int32_t>(i));
  std::vector<std::string> pieces;
  if (char_level) {
    for (char ch : text) pieces.emplace_back(1, ch);
  } else {
    std::istringstream words{std::string(text)};
    for (std::string w; words >> w;) pieces.push_back(w);
  }
  std::vector<std::int32_t> ids;
  for (const auto& p : pieces) {
    const auto it = index.find(p);
    if (it == index.end()) throw ConfigError("token '" + p + "' is not in the vocabulary");
    ids.push_back(it->second);
  }
  return ids;
}

std::string detokenize(const Corpus& corpus, const std::vector<std::int32_t>& ids, const std::string& sep) {
  std::string out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const auto id = ids[i];
    if (id < 0 || static_cast<std::size_t>(id) >= corpus.vocab.size()) {
      throw IndexError("token id " + std::to_string(id) + " outside the vocabulary");
    }
    if (i > 0) out += sep;
    out += corpus.vocab[static_cast<std::size_t>(id)];
  }
  return out;
}

std::pair<Corpus, Corpus> train_val_split(const Corpus& corpus, double fraction) {
  if (!(fraction > 0.0 && fraction < 1.0)) throw ConfigError("split fraction must lie in (0, 1)");
  const auto n = corpus.ids.size();
  const auto cut = static_cast<std::size_t>(static_cast<double>(n) * fraction);
  if (cut == 0 || cut == n) {
    throw ConfigError("split fraction " + std::to_string(fraction) + " leaves one side of " + std::to_string(n) +
                      " tokens empty");
  }
  Corpus train = corpus;
  Corpus val = corpus;
  train.ids.assign(corpus.ids.begin(), corpus.ids.begin() + static_cast<std::ptrdiff_t>(cut));
  val.ids.assign(corpus.ids.begin() + static_cast<std::ptrdiff_t>(cut), corpus.ids.end());
  return {std::move(train), std::move(val)};
}

SupervisedBatch make_lm_batch(const std::vector<std::int32_t>& ids, std::size_t batch_size, std::size_t len,
                              Rng& rng) {
  if (ids.size() < len + 1) {
    throw ConfigError("corpus of " + std::to_string(ids.size()) + " tokens is too short for context " +
                      std::to_string(len));
  }
  SupervisedBatch batch;
  batch.inputs.batch = batch.targets.batch = batch_size;
  batch.inputs.len = batch.targets.len = len;
  batch.inputs.ids.reserve(batch_size * len);
  batch.targets.ids.reserve(batch_size * len);
  const std::size_t starts = ids.size() - len;
  for (std::size_t b = 0; b < batch_size; ++b) {
    const auto s = static_cast<std::ptrdiff_t>(rng.below(starts));
    const auto len_d = static_cast<std::ptrdiff_t>(len);
    batch.inputs.ids.insert(batch.inputs.ids.end(), ids.begin() + s, ids.begin() + s + len_d);
    batch.targets.ids.insert(batch.targets.ids.end(), ids.begin() + s + 1, ids.begin() + s + 1 + len_d);
  }
  return batch;
}

}  // namespace kvt
