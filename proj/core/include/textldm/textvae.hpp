#ifndef TEXTLDM_TEXTVAE_HPP
#define TEXTLDM_TEXTVAE_HPP

#include <span>
#include <utility>

#include "textldm/corpus.hpp"
#include "textldm/params.hpp"
#include "textldm/tensor.hpp"
#include "textldm/transformer.hpp"

namespace tldm {

/// Per-position diagonal Gaussian posterior, one row per input token.
struct Posterior {
  Tensor mu;       // [N, d]
  Tensor log_var;  // [N, d]
};

struct VaeConfig {
  int vocab_size = 0;
  int latent_dim = 16;
  TransformerConfig encoder{.layers = 4, .model_dim = 128, .heads = 4};
  TransformerConfig decoder{.layers = 4, .model_dim = 128, .heads = 4};
  float beta = 1e-3f;
  float lambda_repa = 1.0f;
  int repa_layer_offset = -3;
  int teacher_layers = 4;
  int teacher_dim = 128;
  float logvar_min = -30.0f;
  float logvar_max = 10.0f;
};

/// Token encoder/decoder pair with a one-to-one token-to-latent mapping.
/// The encoder produces per-position (mu, log sigma^2); the decoder maps
/// latents back to vocabulary logits in one parallel pass.
struct TextVae {
  VaeConfig config;
  ParamRegistry params;

  Tensor tok_embed;  // [V, enc_dim]
  TransformerState encoder;
  Tensor mu_w, mu_b;
  Tensor logvar_w, logvar_b;

  Tensor dec_in_w, dec_in_b;  // latent -> dec_dim
  TransformerState decoder;
  Tensor dec_out_w, dec_out_b;  // dec_dim -> V

  Tensor repa_proj_w, repa_proj_b;  // enc_dim -> teacher_dim
};

TextVae make_text_vae(const VaeConfig& config, std::uint64_t seed);

struct EncodeResult {
  Posterior posterior;
  /// Encoder output after the final LayerNorm; the alignment tap point.
  Tensor h_enc;  // [N, enc_dim]
};

EncodeResult vae_encode(const TextVae& vae, std::span<const std::int32_t> tokens);

/// z = mu + exp(0.5 log_var) * eps with eps ~ N(0, I); gradients flow to mu
/// and log_var only.
Tensor vae_reparameterize(const Posterior& posterior, Rng& rng);

/// Latents -> per-position vocabulary logits [N, V].
Tensor vae_decode(const TextVae& vae, const Tensor& z);

/// Mean over rows (or unmasked rows) of 0.5 * sum_d(mu^2 + sigma^2 - 1 - log
/// sigma^2), the closed form against N(0, I).
Tensor kl_divergence(const Posterior& posterior, std::span<const std::uint8_t> mask = {});

// ---------------------------------------------------------------------------
// Frozen teacher
// ---------------------------------------------------------------------------

/// Frozen randomly initialized transformer standing in for a pretrained
/// representation model. The alignment machinery (projection, cosine,
/// stop-gradient, layer offset) is exercised exactly as with a real teacher;
/// swap in different weights to change the alignment target.
struct Teacher {
  TransformerConfig config;
  int vocab_size = 0;
  Tensor tok_embed;
  TransformerState backbone;
  ParamRegistry params;  // never trained; kept for deterministic layout
};

Teacher make_teacher(int vocab_size, int layers = 4, int dim = 128, int heads = 4,
                     std::uint64_t seed = 7);

/// Hidden states of the layer addressed by a negative offset (-1 = last,
/// -L = first). Runs without gradient recording; two calls with the same
/// tokens are bit-identical.
Tensor teacher_hidden(const Teacher& teacher, std::span<const std::int32_t> tokens,
                      int layer_offset);

/// -(1/N) sum_i cos(project(h_enc)_i, stopgrad(teacher_hidden)_i).
/// Gradient reaches the encoder and the projection, never the teacher.
Tensor repa_loss(const Tensor& h_enc, const Tensor& teacher_hidden, const Tensor& proj_w,
                 const Tensor& proj_b);

// ---------------------------------------------------------------------------
// Composite objective
// ---------------------------------------------------------------------------

struct VaeLossBreakdown {
  Tensor total;  // graph node for backward
  float ce = 0.0f;
  float kl = 0.0f;
  float repa = 0.0f;
  float total_value = 0.0f;
  float beta = 0.0f;
  float lambda = 0.0f;
};

/// ce + beta * kl + lambda * repa with terms dropped exactly when their
/// weight is zero (so beta=0, lambda=0 yields total == ce bit-exactly, and
/// the teacher is not evaluated when lambda == 0).
VaeLossBreakdown vae_training_loss(const TextVae& vae, std::span<const std::int32_t> tokens,
                                   const Teacher* teacher, Rng& rng, float beta, float lambda);

/// Context and target encoded by two independent encoder invocations, so
/// context latents are a pure function of context tokens only.
std::pair<EncodeResult, EncodeResult> encode_split(const TextVae& vae,
                                                   std::span<const std::int32_t> context_tokens,
                                                   std::span<const std::int32_t> target_tokens);

}  // namespace tldm

#endif  // TEXTLDM_TEXTVAE_HPP
