#ifndef TEXTLDM_CORPUS_HPP
#define TEXTLDM_CORPUS_HPP

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "textldm/rng.hpp"

namespace tldm {

using TokenSeq = std::vector<std::int32_t>;

/// Whitespace-token vocabulary. Ids 0..3 are reserved for PAD/BOS/EOS/UNK;
/// content ids follow in first-occurrence order over the corpus.
struct Vocabulary {
  static constexpr std::int32_t kPad = 0;
  static constexpr std::int32_t kBos = 1;
  static constexpr std::int32_t kEos = 2;
  static constexpr std::int32_t kUnk = 3;

  std::vector<std::string> tokens;
  std::unordered_map<std::string, std::int32_t> index;

  std::int32_t size() const { return static_cast<std::int32_t>(tokens.size()); }
  std::int32_t lookup(std::string_view word) const;
  const std::string& word(std::int32_t id) const;
};

/// Fixed template grammar: DET ADJ NOUN VERB DET ADJ NOUN ".", every slot
/// drawn uniformly; a document concatenates 2..6 sentences. Small enough to
/// train against in minutes, structured enough that continuation quality is
/// measurable.
namespace grammar {
std::span<const std::string_view> determiners();
std::span<const std::string_view> adjectives();
std::span<const std::string_view> nouns();
std::span<const std::string_view> verbs();
constexpr int kSentenceTokens = 8;
constexpr int kMinSentences = 2;
constexpr int kMaxSentences = 6;
/// True when `words` is a concatenation of well-formed sentences.
bool parses(std::span<const std::string> words);
/// Unigram probability of each word under the grammar (keys are content
/// words plus "."). Used by evaluation baselines.
std::unordered_map<std::string, double> unigram_distribution();
}  // namespace grammar

/// Deterministic synthetic corpus: one document per entry, 2..6 grammar
/// sentences each. A document is a pure function of (seed, index).
std::vector<std::string> generate_synthetic_corpus(std::size_t n_docs, std::uint64_t seed);

/// One id per distinct whitespace token, first-occurrence order, after the
/// four reserved ids. Throws std::invalid_argument on an empty corpus.
Vocabulary build_vocab(std::span<const std::string> corpus);

TokenSeq encode(std::string_view text, const Vocabulary& vocab);
std::string decode(std::span<const std::int32_t> ids, const Vocabulary& vocab);

/// encode() plus a trailing EOS, truncated to max_len tokens.
TokenSeq encode_document(std::string_view text, const Vocabulary& vocab, int max_len);

// Plain-text ingestion: UTF-8, one document per line.
std::vector<std::string> load_corpus_file(const std::string& path);
void save_corpus_file(const std::string& path, std::span<const std::string> docs);
// Vocabulary file: one token per line, line number = id.
Vocabulary load_vocab_file(const std::string& path);
void save_vocab_file(const std::string& path, const Vocabulary& vocab);

// ---------------------------------------------------------------------------
// Batch iterators
// ---------------------------------------------------------------------------

/// Rectangular batch: per-sample sequences plus the PAD-padded id matrix and
/// its 0/1 mask.
struct TokenBatch {
  std::vector<TokenSeq> seqs;
  std::vector<std::int32_t> padded;  // [batch, width] row-major
  std::vector<std::uint8_t> mask;    // 1 = real token
  std::int64_t batch = 0;
  std::int64_t width = 0;
};

TokenBatch pad_batch(std::vector<TokenSeq> seqs);

struct VaeBatchConfig {
  int batch = 16;
  int max_len = 64;
  int min_trunc_len = 4;
  std::uint64_t seed = 1;
};

/// Reconstruction batches: documents drawn uniformly, then independently
/// truncated to a uniform random length in [min_trunc_len, len]. The stream
/// is a pure function of (docs, config).
class VaeBatchIterator {
 public:
  VaeBatchIterator(std::span<const TokenSeq> docs, VaeBatchConfig config);
  TokenBatch next();

 private:
  std::span<const TokenSeq> docs_;
  VaeBatchConfig config_;
  Rng stream_;
  std::uint64_t batch_index_ = 0;
};

struct SplitSample {
  TokenSeq context;  // length M, empty for full-target samples
  TokenSeq target;   // length N - M
};

struct DitBatchConfig {
  int batch = 16;
  double split_lo = 0.4;
  double split_hi = 0.6;
  double p_full = 0.1;   // probability of an empty context (whole doc is target)
  std::uint64_t seed = 1;
};

/// Context/target split batches. With probability p_full the whole sequence
/// becomes the target (M = 0); otherwise M = round(u * N) with u uniform in
/// [split_lo, split_hi], clamped so both sides are nonempty.
class DitBatchIterator {
 public:
  DitBatchIterator(std::span<const TokenSeq> docs, DitBatchConfig config);
  std::vector<SplitSample> next();

 private:
  std::span<const TokenSeq> docs_;
  DitBatchConfig config_;
  Rng stream_;
  std::uint64_t batch_index_ = 0;
};

}  // namespace tldm

#endif  // TEXTLDM_CORPUS_HPP
