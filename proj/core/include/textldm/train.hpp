#ifndef TEXTLDM_TRAIN_HPP
#define TEXTLDM_TRAIN_HPP

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "textldm/checkpoint.hpp"
#include "textldm/corpus.hpp"
#include "textldm/flowdiff.hpp"
#include "textldm/optim.hpp"
#include "textldm/textvae.hpp"

namespace tldm {

struct TrainConfig {
  std::int64_t steps = 5000;
  int batch = 16;
  float lr = 1e-4f;
  float weight_decay = 0.01f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float kl_warmup_fraction = 0.1f;
  std::uint64_t seed = 1;
  std::int64_t eval_every = 200;
  float clip_norm = 1.0f;
  int max_len = 64;
  int holdout_docs = 64;  // reserved tail of the corpus, never trained on
  bool save_optimizer_state = false;
};

using LogSink = std::function<void(const std::string& line)>;

std::vector<TokenSeq> encode_corpus(std::span<const std::string> docs, const Vocabulary& vocab,
                                    int max_len);

struct CorpusSplit {
  std::vector<TokenSeq> train;
  std::vector<TokenSeq> holdout;
};

/// Reserves the corpus tail as held-out documents (at most half the corpus).
CorpusSplit split_corpus(std::vector<TokenSeq> docs, int holdout_docs);

std::string vocab_to_string(const Vocabulary& vocab);
Vocabulary vocab_from_string(const std::string& packed);

// ---------------------------------------------------------------------------
// Model <-> checkpoint adapters
// ---------------------------------------------------------------------------

Checkpoint vae_to_checkpoint(const TextVae& vae, const Vocabulary& vocab,
                             std::uint64_t seed, std::int64_t steps_done,
                             const AdamW* optimizer = nullptr);
struct LoadedVae {
  TextVae model;
  Vocabulary vocab;
};
LoadedVae vae_from_checkpoint(const Checkpoint& ckpt);

Checkpoint dit_to_checkpoint(const DitModel& dit, std::uint64_t seed, std::int64_t steps_done,
                             const AdamW* optimizer = nullptr);
DitModel dit_from_checkpoint(const Checkpoint& ckpt);

// ---------------------------------------------------------------------------
// Training loops
// ---------------------------------------------------------------------------

struct VaeTrainOutput {
  Checkpoint checkpoint;
  TextVae model;
  Vocabulary vocab;
  std::vector<TokenSeq> holdout;
  float final_ce = 0.0f;
  float final_repa = 0.0f;
  /// Lowest batch-mean alignment loss seen over the run.
  float min_repa = 0.0f;
};

/// Stage one. Builds the vocabulary from the corpus, trains with the
/// composite objective under KL warmup, and returns the final checkpoint.
/// Deterministic per (corpus, configs, seed).
VaeTrainOutput train_vae(std::span<const std::string> corpus, VaeConfig vae_config,
                         const TrainConfig& train_config, const LogSink& log = {});

struct DitTrainOutput {
  Checkpoint checkpoint;
  DitModel model;
  std::vector<TokenSeq> holdout;
};

/// Stage two. Freezes the VAE from its checkpoint, computes latent
/// standardization statistics from a held-out encoding pass, and trains the
/// velocity model on standardized latents.
DitTrainOutput train_dit(const Checkpoint& vae_checkpoint, std::span<const std::string> corpus,
                         DitConfig dit_config, DitBatchConfig split_config,
                         const TrainConfig& train_config, const LogSink& log = {});

}  // namespace tldm

#endif  // TEXTLDM_TRAIN_HPP
