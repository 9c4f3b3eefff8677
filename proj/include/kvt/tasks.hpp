#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "kvt/model.hpp"
#include "kvt/rng.hpp"

namespace kvt {

enum class SyntheticKind { Reverse, Sort, Swap, Sub, Copy };

std::string synthetic_name(SyntheticKind kind);
SyntheticKind parse_synthetic(const std::string& name);

using Digits = std::vector<std::int32_t>;

/// Digit lists in [0, 9]. Swap exchanges the two exact halves and so needs
/// an even length.
struct SyntheticTask {
  SyntheticKind kind = SyntheticKind::Copy;
  std::size_t seq_len = 16;

  static constexpr std::size_t kVocab = 10;
  /// Throws ConfigError for seq_len 0 or an odd Swap length.
  void validate() const;
};

/// Deterministic target for `input`.
Digits apply_transform(SyntheticKind kind, const Digits& input);

/// One uniformly random digit list and its target.
std::pair<Digits, Digits> gen_synthetic(const SyntheticTask& task, Rng& rng);

struct SupervisedBatch {
  TokenBatch inputs;
  TokenBatch targets;
};

/// `batch_size` samples; sample i is drawn from its own stream seeded by
/// derive_seed(seed, first_index + i).
SupervisedBatch make_synthetic_batch(const SyntheticTask& task, std::size_t batch_size, std::uint64_t seed,
                                    std::uint64_t first_index);

enum class CorpusSource { NumberWords, CharFile };

struct Corpus {
  std::vector<std::int32_t> ids;
  std::vector<std::string> vocab;
  CorpusSource source = CorpusSource::NumberWords;
  std::string origin;  // file path for CharFile
};

/// English words for 1..9999: no "and", no hyphens. Throws ConfigError out of range.
std::vector<std::string> number_to_words(int n);

/// number_to_words(1..9999), each number followed by a "." token.
Corpus build_number_corpus();
/// Separator convention used by build_number_corpus, recorded in reports.
inline constexpr const char* kNumberCorpusConvention = "each number followed by '.'";

/// Vocabulary = sorted distinct bytes of `text`. Throws ConfigError on empty text.
Corpus char_tokenize(const std::string& text);
Corpus char_corpus_from_file(const std::filesystem::path& path);
std::string detokenize(const Corpus& corpus, const std::vector<std::int32_t>& ids, const std::string& sep = "");

/// Maps text onto `vocab`: one token per byte when `char_level`, otherwise one
/// per whitespace-separated word. Throws ConfigError naming the first unknown token.
std::vector<std::int32_t> encode_text(const std::vector<std::string>& vocab, std::string_view text, bool char_level);

/// Contiguous split: the first floor(n * fraction) ids train, the rest validate.
std::pair<Corpus, Corpus> train_val_split(const Corpus& corpus, double fraction);

/// Next-token windows: inputs ids[s..s+len), targets ids[s+1..s+len+1) for
/// start offsets drawn from `rng`.
SupervisedBatch make_lm_batch(const std::vector<std::int32_t>& ids, std::size_t batch_size, std::size_t len, Rng& rng);

}  // namespace kvt
