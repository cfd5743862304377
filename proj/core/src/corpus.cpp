#include "textldm/corpus.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace tldm {

namespace {

const std::array<std::string_view, 2> kDet = {"the", "a"};
const std::array<std::string_view, 6> kAdj = {"red", "blue", "small", "big", "old", "new"};
const std::array<std::string_view, 8> kNoun = {"cat",   "dog",  "bird", "car",
                                               "house", "tree", "boat", "book"};
const std::array<std::string_view, 6> kVerb = {"chased", "saw",    "liked",
                                               "found",  "pushed", "followed"};

const std::array<std::string, 4> kReserved = {"<pad>", "<bos>", "<eos>", "<unk>"};

template <std::size_t N>
std::string_view pick(const std::array<std::string_view, N>& words, Rng& rng) {
  return words[static_cast<std::size_t>(rng.next_below(N))];
}

std::vector<std::string> split_whitespace(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    std::size_t start = i;
    while (i < text.size() && !std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    if (i > start) out.emplace_back(text.substr(start, i - start));
  }
  return out;
}

template <std::size_t N>
bool contains(const std::array<std::string_view, N>& words, const std::string& w) {
  return std::find(words.begin(), words.end(), w) != words.end();
}

}  // namespace

namespace grammar {

std::span<const std::string_view> determiners() { return kDet; }
std::span<const std::string_view> adjectives() { return kAdj; }
std::span<const std::string_view> nouns() { return kNoun; }
std::span<const std::string_view> verbs() { return kVerb; }

bool parses(std::span<const std::string> words) {
  if (words.empty() || words.size() % kSentenceTokens != 0) return false;
  for (std::size_t s = 0; s < words.size(); s += kSentenceTokens) {
    if (!contains(kDet, words[s + 0])) return false;
    if (!contains(kAdj, words[s + 1])) return false;
    if (!contains(kNoun, words[s + 2])) return false;
    if (!contains(kVerb, words[s + 3])) return false;
    if (!contains(kDet, words[s + 4])) return false;
    if (!contains(kAdj, words[s + 5])) return false;
    if (!contains(kNoun, words[s + 6])) return false;
    if (words[s + 7] != ".") return false;
  }
  return true;
}

std::unordered_map<std::string, double> unigram_distribution() {
  // Per 8-token sentence: two DET slots, two ADJ slots, two NOUN slots, one
  // VERB slot, one ".".
  std::unordered_map<std::string, double> p;
  for (auto w : kDet) p[std::string(w)] = 2.0 / (kDet.size() * kSentenceTokens);
  for (auto w : kAdj) p[std::string(w)] = 2.0 / (kAdj.size() * kSentenceTokens);
  for (auto w : kNoun) p[std::string(w)] = 2.0 / (kNoun.size() * kSentenceTokens);
  for (auto w : kVerb) p[std::string(w)] = 1.0 / (kVerb.size() * kSentenceTokens);
  p["."] = 1.0 / kSentenceTokens;
  return p;
}

}  // namespace grammar

std::vector<std::string> generate_synthetic_corpus(std::size_t n_docs, std::uint64_t seed) {
  Rng stream = Rng::stream(seed, "corpus");
  std::vector<std::string> docs;
  docs.reserve(n_docs);
  for (std::size_t d = 0; d < n_docs; ++d) {
    Rng rng = stream.split(d);
    const int sentences =
        grammar::kMinSentences +
        static_cast<int>(rng.next_below(grammar::kMaxSentences - grammar::kMinSentences + 1));
    std::string doc;
    for (int s = 0; s < sentences; ++s) {
      if (s) doc += ' ';
      doc += pick(kDet, rng);
      doc += ' ';
      doc += pick(kAdj, rng);
      doc += ' ';
      doc += pick(kNoun, rng);
      doc += ' ';
      doc += pick(kVerb, rng);
      doc += ' ';
      doc += pick(kDet, rng);
      doc += ' ';
      doc += pick(kAdj, rng);
      doc += ' ';
      doc += pick(kNoun, rng);
      doc += " .";
    }
    docs.push_back(std::move(doc));
  }
  return docs;
}

std::int32_t Vocabulary::lookup(std::string_view word) const {
  auto it = index.find(std::string(word));
  return it == index.end() ? kUnk : it->second;
}

const std::string& Vocabulary::word(std::int32_t id) const {
  if (id < 0 || id >= size()) {
    throw std::out_of_range("vocabulary: id " + std::to_string(id) + " out of range [0, " +
                            std::to_string(size()) + ")");
  }
  return tokens[static_cast<std::size_t>(id)];
}

Vocabulary build_vocab(std::span<const std::string> corpus) {
  if (corpus.empty()) throw std::invalid_argument("build_vocab: empty corpus");
  Vocabulary v;
  for (const auto& r : kReserved) {
    v.index.emplace(r, v.size());
    v.tokens.push_back(r);
  }
  for (const auto& doc : corpus) {
    for (auto& w : split_whitespace(doc)) {
      if (v.index.emplace(w, v.size()).second) v.tokens.push_back(w);
    }
  }
  return v;
}

TokenSeq encode(std::string_view text, const Vocabulary& vocab) {
  TokenSeq ids;
  for (auto& w : split_whitespace(text)) ids.push_back(vocab.lookup(w));
  return ids;
}

std::string decode(std::span<const std::int32_t> ids, const Vocabulary& vocab) {
  std::string out;
  for (std::int32_t id : ids) {
    if (!out.empty()) out += ' ';
    out += vocab.word(id);
  }
  return out;
}

TokenSeq encode_document(std::string_view text, const Vocabulary& vocab, int max_len) {
  TokenSeq ids = encode(text, vocab);
  ids.push_back(Vocabulary::kEos);
  if (static_cast<int>(ids.size()) > max_len) ids.resize(static_cast<std::size_t>(max_len));
  return ids;
}

std::vector<std::string> load_corpus_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open corpus file: " + path);
  std::vector<std::string> docs;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) docs.push_back(line);
  }
  return docs;
}

void save_corpus_file(const std::string& path, std::span<const std::string> docs) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write corpus file: " + path);
  for (const auto& d : docs) out << d << '\n';
}

Vocabulary load_vocab_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open vocabulary file: " + path);
  Vocabulary v;
  std::string line;
  while (std::getline(in, line)) {
    v.index.emplace(line, v.size());
    v.tokens.push_back(line);
  }
  if (v.size() < 4) throw std::runtime_error("vocabulary file too small: " + path);
  return v;
}

void save_vocab_file(const std::string& path, const Vocabulary& vocab) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write vocabulary file: " + path);
  for (const auto& t : vocab.tokens) out << t << '\n';
}

// ---------------------------------------------------------------------------
// Batch iterators
// ---------------------------------------------------------------------------

TokenBatch pad_batch(std::vector<TokenSeq> seqs) {
  TokenBatch b;
  b.batch = static_cast<std::int64_t>(seqs.size());
  for (const auto& s : seqs) b.width = std::max<std::int64_t>(b.width, static_cast<std::int64_t>(s.size()));
  b.padded.assign(static_cast<std::size_t>(b.batch * b.width), Vocabulary::kPad);
  b.mask.assign(static_cast<std::size_t>(b.batch * b.width), 0);
  for (std::int64_t i = 0; i < b.batch; ++i) {
    const auto& s = seqs[static_cast<std::size_t>(i)];
    for (std::size_t j = 0; j < s.size(); ++j) {
      b.padded[static_cast<std::size_t>(i * b.width) + j] = s[j];
      b.mask[static_cast<std::size_t>(i * b.width) + j] = 1;
    }
  }
  b.seqs = std::move(seqs);
  return b;
}

VaeBatchIterator::VaeBatchIterator(std::span<const TokenSeq> docs, VaeBatchConfig config)
    : docs_(docs), config_(config), stream_(Rng::stream(config.seed, "data.vae")) {
  if (docs.empty()) throw std::invalid_argument("VaeBatchIterator: no documents");
}

TokenBatch VaeBatchIterator::next() {
  Rng batch_rng = stream_.split(batch_index_++);
  std::vector<TokenSeq> seqs;
  seqs.reserve(static_cast<std::size_t>(config_.batch));
  for (int i = 0; i < config_.batch; ++i) {
    Rng rng = batch_rng.split(static_cast<std::uint64_t>(i));
    const auto& doc = docs_[static_cast<std::size_t>(rng.next_below(docs_.size()))];
    const int n = std::min<int>(static_cast<int>(doc.size()), config_.max_len);
    const int lo = std::min(config_.min_trunc_len, n);
    const int len = lo + static_cast<int>(rng.next_below(static_cast<std::uint64_t>(n - lo + 1)));
    seqs.emplace_back(doc.begin(), doc.begin() + len);
  }
  return pad_batch(std::move(seqs));
}

DitBatchIterator::DitBatchIterator(std::span<const TokenSeq> docs, DitBatchConfig config)
    : docs_(docs), config_(config), stream_(Rng::stream(config.seed, "data.dit")) {
  if (docs.empty()) throw std::invalid_argument("DitBatchIterator: no documents");
  if (!(0.0 <= config.split_lo && config.split_lo <= config.split_hi && config.split_hi <= 1.0)) {
    throw std::invalid_argument("DitBatchIterator: split band must satisfy 0 <= lo <= hi <= 1");
  }
}

std::vector<SplitSample> DitBatchIterator::next() {
  Rng batch_rng = stream_.split(batch_index_++);
  std::vector<SplitSample> out;
  out.reserve(static_cast<std::size_t>(config_.batch));
  for (int i = 0; i < config_.batch; ++i) {
    Rng rng = batch_rng.split(static_cast<std::uint64_t>(i));
    const auto& doc = docs_[static_cast<std::size_t>(rng.next_below(docs_.size()))];
    const auto n = static_cast<std::int64_t>(doc.size());
    SplitSample s;
    if (rng.next_double() < config_.p_full || n < 2) {
      s.target = doc;
    } else {
      const double u = config_.split_lo + (config_.split_hi - config_.split_lo) * rng.next_double();
      auto m = static_cast<std::int64_t>(std::llround(u * static_cast<double>(n)));
      m = std::clamp<std::int64_t>(m, 1, n - 1);
      s.context.assign(doc.begin(), doc.begin() + m);
      s.target.assign(doc.begin() + m, doc.end());
    }
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace tldm
