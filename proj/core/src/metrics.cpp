#include "textldm/metrics.hpp"

#include <algorithm>
#include <cctype>
#include <map>
#include <stdexcept>

namespace tldm {

namespace {

RougeScore from_counts(double overlap, double ref_count, double hyp_count) {
  RougeScore s;
  s.recall = ref_count > 0 ? overlap / ref_count : 0.0;
  s.precision = hyp_count > 0 ? overlap / hyp_count : 0.0;
  s.f1 = (s.precision + s.recall) > 0.0
             ? 2.0 * s.precision * s.recall / (s.precision + s.recall)
             : 0.0;
  return s;
}

std::map<std::vector<std::string>, int> ngram_counts(std::span<const std::string> tokens, int n) {
  std::map<std::vector<std::string>, int> counts;
  if (static_cast<int>(tokens.size()) < n) return counts;
  for (std::size_t i = 0; i + static_cast<std::size_t>(n) <= tokens.size(); ++i) {
    std::vector<std::string> gram(tokens.begin() + static_cast<std::ptrdiff_t>(i),
                                  tokens.begin() + static_cast<std::ptrdiff_t>(i) + n);
    ++counts[std::move(gram)];
  }
  return counts;
}

std::size_t lcs_length(std::span<const std::string> a, std::span<const std::string> b) {
  const std::size_t n = a.size(), m = b.size();
  std::vector<std::size_t> prev(m + 1, 0), cur(m + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    for (std::size_t j = 1; j <= m; ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[m];
}

std::map<std::string, std::int64_t> unigram_counts(std::span<const std::string> docs,
                                                   std::int64_t* total) {
  std::map<std::string, std::int64_t> counts;
  std::int64_t n = 0;
  for (const auto& doc : docs) {
    for (auto& w : rouge_normalize(doc)) {
      ++counts[w];
      ++n;
    }
  }
  *total = n;
  return counts;
}

}  // namespace

std::vector<std::string> rouge_normalize(std::string_view text) {
  std::vector<std::string> out;
  std::string word;
  for (char c : text) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      if (!word.empty()) out.push_back(std::move(word)), word.clear();
    } else {
      word += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    }
  }
  if (!word.empty()) out.push_back(std::move(word));
  return out;
}

RougeScore rouge_n(std::span<const std::string> reference,
                   std::span<const std::string> hypothesis, int n) {
  if (n < 1) throw std::invalid_argument("rouge_n: n must be >= 1");
  const auto ref = ngram_counts(reference, n);
  const auto hyp = ngram_counts(hypothesis, n);
  double ref_total = 0.0, hyp_total = 0.0, overlap = 0.0;
  for (const auto& [g, c] : ref) ref_total += c;
  for (const auto& [g, c] : hyp) {
    hyp_total += c;
    auto it = ref.find(g);
    if (it != ref.end()) overlap += std::min(c, it->second);
  }
  return from_counts(overlap, ref_total, hyp_total);
}

RougeScore rouge_n(std::string_view reference, std::string_view hypothesis, int n) {
  const auto r = rouge_normalize(reference);
  const auto h = rouge_normalize(hypothesis);
  return rouge_n(std::span<const std::string>(r), std::span<const std::string>(h), n);
}

RougeScore rouge_l(std::span<const std::string> reference,
                   std::span<const std::string> hypothesis) {
  const double lcs = static_cast<double>(lcs_length(reference, hypothesis));
  return from_counts(lcs, static_cast<double>(reference.size()),
                     static_cast<double>(hypothesis.size()));
}

RougeScore rouge_l(std::string_view reference, std::string_view hypothesis) {
  const auto r = rouge_normalize(reference);
  const auto h = rouge_normalize(hypothesis);
  return rouge_l(std::span<const std::string>(r), std::span<const std::string>(h));
}

double reconstruction_accuracy(std::span<const std::int32_t> tokens, const Tensor& logits,
                               std::span<const std::uint8_t> mask) {
  if (logits.rank() != 2 || logits.shape()[0] != static_cast<std::int64_t>(tokens.size())) {
    throw std::invalid_argument("reconstruction_accuracy: logits shape " +
                                shape_str(logits.shape()) + " does not match " +
                                std::to_string(tokens.size()) + " tokens");
  }
  if (!mask.empty() && mask.size() != tokens.size()) {
    throw std::invalid_argument("reconstruction_accuracy: mask size mismatch");
  }
  const std::int64_t vocab = logits.shape()[1];
  const auto data = logits.data();
  std::int64_t correct = 0, counted = 0;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (!mask.empty() && !mask[i]) continue;
    const float* row = data.data() + static_cast<std::int64_t>(i) * vocab;
    std::int64_t best = 0;
    for (std::int64_t j = 1; j < vocab; ++j) {
      if (row[j] > row[best]) best = j;
    }
    correct += best == tokens[i] ? 1 : 0;
    ++counted;
  }
  return counted == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(counted);
}

double unigram_tv_distance(std::span<const std::string> samples,
                           std::span<const std::string> corpus) {
  std::int64_t n_samples = 0, n_corpus = 0;
  const auto p = unigram_counts(samples, &n_samples);
  const auto q = unigram_counts(corpus, &n_corpus);
  if (n_samples == 0 || n_corpus == 0) {
    throw std::invalid_argument("unigram_tv_distance: empty token stream");
  }
  double tv = 0.0;
  for (const auto& [w, c] : p) {
    const auto it = q.find(w);
    const double pw = double(c) / double(n_samples);
    const double qw = it == q.end() ? 0.0 : double(it->second) / double(n_corpus);
    tv += std::abs(pw - qw);
  }
  for (const auto& [w, c] : q) {
    if (p.find(w) == p.end()) tv += double(c) / double(n_corpus);
  }
  return 0.5 * tv;
}

}  // namespace tldm
