#include "textldm/textvae.hpp"

#include <cmath>
#include <stdexcept>

namespace tldm {

TextVae make_text_vae(const VaeConfig& config, std::uint64_t seed) {
  if (config.vocab_size <= 0) throw std::invalid_argument("textvae: vocab_size must be set");
  if (config.latent_dim <= 0) throw std::invalid_argument("textvae: latent_dim must be > 0");
  config.encoder.validate();
  config.decoder.validate();

  TextVae vae;
  vae.config = config;
  Rng init = Rng::stream(seed, "init.vae");

  const std::int64_t v = config.vocab_size;
  const std::int64_t de = config.encoder.model_dim;
  const std::int64_t dd = config.decoder.model_dim;
  const std::int64_t dl = config.latent_dim;
  const std::int64_t dt = config.teacher_dim;

  vae.tok_embed = vae.params.add("enc.tok_embed", normal_init({v, de}, init));
  vae.encoder = make_transformer(config.encoder, init, vae.params, "enc");
  vae.mu_w = vae.params.add("enc.mu.w", normal_init({de, dl}, init));
  vae.mu_b = vae.params.add("enc.mu.b", Tensor::zeros({dl}));
  vae.logvar_w = vae.params.add("enc.logvar.w", normal_init({de, dl}, init));
  vae.logvar_b = vae.params.add("enc.logvar.b", Tensor::zeros({dl}));

  vae.dec_in_w = vae.params.add("dec.in.w", normal_init({dl, dd}, init));
  vae.dec_in_b = vae.params.add("dec.in.b", Tensor::zeros({dd}));
  vae.decoder = make_transformer(config.decoder, init, vae.params, "dec");
  vae.dec_out_w = vae.params.add("dec.out.w", normal_init({dd, v}, init));
  vae.dec_out_b = vae.params.add("dec.out.b", Tensor::zeros({v}));

  vae.repa_proj_w = vae.params.add("repa.proj.w", normal_init({de, dt}, init));
  vae.repa_proj_b = vae.params.add("repa.proj.b", Tensor::zeros({dt}));
  return vae;
}

EncodeResult vae_encode(const TextVae& vae, std::span<const std::int32_t> tokens) {
  EncodeResult r;
  if (tokens.empty()) {
    const std::int64_t dl = vae.config.latent_dim;
    r.posterior.mu = Tensor::zeros({0, dl});
    r.posterior.log_var = Tensor::zeros({0, dl});
    r.h_enc = Tensor::zeros({0, vae.config.encoder.model_dim});
    return r;
  }
  Tensor x = embedding(vae.tok_embed, tokens);
  TransformerOutput out = transformer_forward(vae.encoder, x);
  r.h_enc = out.final_output;
  r.posterior.mu = linear(r.h_enc, vae.mu_w, vae.mu_b);
  r.posterior.log_var =
      clamp(linear(r.h_enc, vae.logvar_w, vae.logvar_b), vae.config.logvar_min,
            vae.config.logvar_max);
  return r;
}

Tensor vae_reparameterize(const Posterior& posterior, Rng& rng) {
  Tensor eps = Tensor::gaussian(posterior.mu.shape(), rng);
  return add(posterior.mu, mul(exp(scale(posterior.log_var, 0.5f)), eps));
}

Tensor vae_decode(const TextVae& vae, const Tensor& z) {
  if (z.rank() != 2 || z.shape()[1] != vae.config.latent_dim) {
    throw std::invalid_argument("vae_decode: latents must be [rows, " +
                                std::to_string(vae.config.latent_dim) + "], got " +
                                shape_str(z.shape()));
  }
  Tensor x = linear(z, vae.dec_in_w, vae.dec_in_b);
  TransformerOutput out = transformer_forward(vae.decoder, x);
  return linear(out.final_output, vae.dec_out_w, vae.dec_out_b);
}

Tensor kl_divergence(const Posterior& posterior, std::span<const std::uint8_t> mask) {
  const auto& mu = posterior.mu;
  const auto& lv = posterior.log_var;
  if (mu.shape() != lv.shape()) {
    throw std::invalid_argument("kl_divergence: mu and log_var shapes disagree");
  }
  const std::int64_t rows = mu.shape()[0];
  if (rows == 0) return Tensor::scalar(0.0f);
  // per-position 0.5 * sum_d(mu^2 + exp(lv) - 1 - lv)
  Tensor term = add_scalar(add(mul(mu, mu), sub(exp(lv), lv)), -1.0f);
  Tensor per_pos = scale(sum_last(term), 0.5f);
  if (mask.empty()) return mean(per_pos);
  if (static_cast<std::int64_t>(mask.size()) != rows) {
    throw std::invalid_argument("kl_divergence: mask size mismatch");
  }
  std::int64_t count = 0;
  std::vector<float> m(mask.size());
  for (std::size_t i = 0; i < mask.size(); ++i) {
    m[i] = mask[i] ? 1.0f : 0.0f;
    count += mask[i] ? 1 : 0;
  }
  if (count == 0) return Tensor::scalar(0.0f);
  Tensor masked = mul(per_pos, Tensor::from_data({rows}, std::move(m)));
  return scale(sum(masked), 1.0f / static_cast<float>(count));
}

// ---------------------------------------------------------------------------
// Teacher
// ---------------------------------------------------------------------------

Teacher make_teacher(int vocab_size, int layers, int dim, int heads, std::uint64_t seed) {
  if (vocab_size <= 0) throw std::invalid_argument("teacher: vocab_size must be set");
  Teacher t;
  t.config = TransformerConfig{.layers = layers, .model_dim = dim, .heads = heads};
  t.config.validate();
  t.vocab_size = vocab_size;
  Rng init = Rng::stream(seed, "init.teacher");
  t.tok_embed = t.params.add("teacher.tok_embed", normal_init({vocab_size, dim}, init));
  t.backbone = make_transformer(t.config, init, t.params, "teacher");
  for (auto p : t.params.params()) p.set_requires_grad(false);
  return t;
}

Tensor teacher_hidden(const Teacher& teacher, std::span<const std::int32_t> tokens,
                      int layer_offset) {
  const int layers = teacher.config.layers;
  if (layer_offset >= 0 || layer_offset < -layers) {
    throw std::invalid_argument("teacher_hidden: layer offset " + std::to_string(layer_offset) +
                                " out of range [-" + std::to_string(layers) + ", -1]");
  }
  NoGradGuard frozen;
  if (tokens.empty()) return Tensor::zeros({0, teacher.config.model_dim});
  Tensor x = embedding(teacher.tok_embed, tokens);
  TransformerOutput out = transformer_forward(teacher.backbone, x);
  return out.layer_outputs[static_cast<std::size_t>(layers + layer_offset)];
}

Tensor repa_loss(const Tensor& h_enc, const Tensor& teacher_h, const Tensor& proj_w,
                 const Tensor& proj_b) {
  if (h_enc.rank() != 2 || teacher_h.rank() != 2 || h_enc.shape()[0] != teacher_h.shape()[0]) {
    throw std::invalid_argument("repa_loss: row counts disagree: " + shape_str(h_enc.shape()) +
                                " vs " + shape_str(teacher_h.shape()));
  }
  Tensor projected = linear(h_enc, proj_w, proj_b);
  Tensor cos = cosine_similarity(projected, teacher_h.detach());
  return scale(mean(cos), -1.0f);
}

// ---------------------------------------------------------------------------
// Composite objective
// ---------------------------------------------------------------------------

VaeLossBreakdown vae_training_loss(const TextVae& vae, std::span<const std::int32_t> tokens,
                                   const Teacher* teacher, Rng& rng, float beta, float lambda) {
  VaeLossBreakdown out;
  out.beta = beta;
  out.lambda = lambda;

  EncodeResult enc = vae_encode(vae, tokens);
  Tensor z = vae_reparameterize(enc.posterior, rng);
  Tensor logits = vae_decode(vae, z);

  Tensor ce = cross_entropy_from_logits(logits, tokens);
  out.ce = ce.item();
  Tensor total = ce;

  if (beta != 0.0f) {
    Tensor kl = kl_divergence(enc.posterior);
    out.kl = kl.item();
    total = add(total, scale(kl, beta));
  } else {
    NoGradGuard ng;
    out.kl = kl_divergence(Posterior{enc.posterior.mu.detach(), enc.posterior.log_var.detach()})
                 .item();
  }

  if (lambda != 0.0f) {
    if (teacher == nullptr) {
      throw std::invalid_argument("vae_training_loss: lambda != 0 requires a teacher");
    }
    Tensor th = teacher_hidden(*teacher, tokens, vae.config.repa_layer_offset);
    Tensor repa = repa_loss(enc.h_enc, th, vae.repa_proj_w, vae.repa_proj_b);
    out.repa = repa.item();
    total = add(total, scale(repa, lambda));
  }

  out.total = total;
  out.total_value = total.item();
  return out;
}

std::pair<EncodeResult, EncodeResult> encode_split(const TextVae& vae,
                                                   std::span<const std::int32_t> context_tokens,
                                                   std::span<const std::int32_t> target_tokens) {
  return {vae_encode(vae, context_tokens), vae_encode(vae, target_tokens)};
}

}  // namespace tldm
