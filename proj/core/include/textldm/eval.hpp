#ifndef TEXTLDM_EVAL_HPP
#define TEXTLDM_EVAL_HPP

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "textldm/corpus.hpp"
#include "textldm/flowdiff.hpp"
#include "textldm/metrics.hpp"
#include "textldm/textvae.hpp"

namespace tldm {

struct EvalConfig {
  int steps = 50;          // Euler steps K
  double cfg_scale = 7.0;  // guidance scale w
  double split_lo = 0.4;
  double split_hi = 0.6;
  std::uint64_t seed = 1;
  int max_samples = 0;  // 0 = evaluate the whole test set
};

struct SampleEval {
  int index = 0;
  int context_len = 0;
  int target_len = 0;
  int nfe = 0;
  RougeScore r1, r2, rl;
};

struct EvalReport {
  std::vector<SampleEval> samples;
  RougeScore r1, r2, rl;  // arithmetic means of per-sample scores
  double reconstruction_accuracy = 0.0;
  double mean_nfe = 0.0;
  double wall_ms = 0.0;  // not part of the deterministic rendering
  std::string config_hash;

  /// UTF-8 key-value block plus a per-sample tab-separated table, fields in
  /// a fixed order; byte-identical for identical inputs and seed.
  std::string render_deterministic() const;
};

/// Generates continuation ids for a context; out_nfe reports the velocity
/// evaluations spent on the sample.
using ContinuationSampler = std::function<TokenSeq(
    const TokenSeq& context, int target_len, Rng& rng, int* out_nfe)>;

/// Continuation protocol: each test document is split at a point uniform in
/// [split_lo, split_hi] of its length, the sampler generates target_len
/// tokens from the prefix, and the hypothesis (truncated at the first EOS)
/// is scored against the ground-truth continuation.
EvalReport continuation_eval_core(const ContinuationSampler& sampler,
                                  std::span<const TokenSeq> testset, const Vocabulary& vocab,
                                  const EvalConfig& config);

/// Model-backed evaluation: context encoded to posterior means, continuation
/// sampled with the Euler sampler at the configured steps and guidance, then
/// decoded through the VAE.
EvalReport continuation_eval(const TextVae& vae, const Vocabulary& vocab, const DitModel& dit,
                             std::span<const TokenSeq> testset, const EvalConfig& config);

/// Sampler used by continuation_eval, exposed for the CLI.
TokenSeq sample_continuation(const TextVae& vae, const DitModel& dit, const TokenSeq& context,
                             int target_len, int steps, std::optional<double> w, Rng& rng,
                             int* out_nfe = nullptr,
                             std::vector<std::pair<int, TokenSeq>>* trace_tokens = nullptr,
                             std::span<const int> trace_at = {});

/// Mean token reconstruction accuracy over documents, decoding from the
/// posterior mean.
double evaluate_reconstruction(const TextVae& vae, std::span<const TokenSeq> docs);

/// Draws unconditional samples and decodes them to text documents.
std::vector<std::string> sample_unconditional_docs(const TextVae& vae, const DitModel& dit,
                                                   const Vocabulary& vocab, int n_docs,
                                                   int target_len, int steps, Rng& rng);

/// Ids cut at the first EOS (exclusive).
TokenSeq truncate_at_eos(const TokenSeq& ids);

}  // namespace tldm

#endif  // TEXTLDM_EVAL_HPP
