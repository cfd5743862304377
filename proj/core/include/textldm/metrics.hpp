#ifndef TEXTLDM_METRICS_HPP
#define TEXTLDM_METRICS_HPP

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "textldm/corpus.hpp"
#include "textldm/tensor.hpp"

namespace tldm {

struct RougeScore {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

/// Lowercase + whitespace tokenization; no stemming, no stopword removal.
std::vector<std::string> rouge_normalize(std::string_view text);

/// Clipped n-gram overlap (recall against reference n-grams, precision
/// against hypothesis n-grams, harmonic-mean f1; f1 = 0 when p + r = 0).
RougeScore rouge_n(std::span<const std::string> reference,
                   std::span<const std::string> hypothesis, int n);
RougeScore rouge_n(std::string_view reference, std::string_view hypothesis, int n);

/// Longest-common-subsequence variant.
RougeScore rouge_l(std::span<const std::string> reference,
                   std::span<const std::string> hypothesis);
RougeScore rouge_l(std::string_view reference, std::string_view hypothesis);

/// Fraction of unmasked positions where argmax(logits) equals the token.
double reconstruction_accuracy(std::span<const std::int32_t> tokens, const Tensor& logits,
                               std::span<const std::uint8_t> mask = {});

/// Total-variation distance between the empirical unigram distributions of
/// two document collections, in [0, 1].
double unigram_tv_distance(std::span<const std::string> samples,
                           std::span<const std::string> corpus);

}  // namespace tldm

#endif  // TEXTLDM_METRICS_HPP
