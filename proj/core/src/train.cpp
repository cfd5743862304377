#include "textldm/train.hpp"

#include <algorithm>
#include <array>
#include <cstdarg>
#include <cstdio>
#include <sstream>
#include <stdexcept>

#include "textldm/parallel.hpp"

namespace tldm {

namespace {

std::string format_line(const char* fmt, ...) {
  char buf[256];
  va_list args;
  va_start(args, fmt);
  std::vsnprintf(buf, sizeof(buf), fmt, args);
  va_end(args);
  return buf;
}

void emit(const LogSink& log, const std::string& line) {
  if (log) log(line);
}

void store_transformer_config(Checkpoint& c, const std::string& prefix,
                              const TransformerConfig& cfg) {
  c.set_int(prefix + ".layers", cfg.layers);
  c.set_int(prefix + ".model_dim", cfg.model_dim);
  c.set_int(prefix + ".heads", cfg.heads);
  c.set_int(prefix + ".ffn_multiplier", cfg.ffn_multiplier);
  c.set_double(prefix + ".rope_base", cfg.rope_base);
  c.set_int(prefix + ".max_positions", cfg.max_positions);
  c.set_int(prefix + ".use_rope", cfg.use_rope ? 1 : 0);
}

TransformerConfig load_transformer_config(const Checkpoint& c, const std::string& prefix) {
  TransformerConfig cfg;
  cfg.layers = static_cast<int>(c.get_int(prefix + ".layers"));
  cfg.model_dim = static_cast<int>(c.get_int(prefix + ".model_dim"));
  cfg.heads = static_cast<int>(c.get_int(prefix + ".heads"));
  cfg.ffn_multiplier = static_cast<int>(c.get_int(prefix + ".ffn_multiplier"));
  cfg.rope_base = c.get_double(prefix + ".rope_base");
  cfg.max_positions = static_cast<int>(c.get_int(prefix + ".max_positions"));
  cfg.use_rope = c.get_int(prefix + ".use_rope") != 0;
  return cfg;
}

void append_params(Checkpoint& c, const ParamRegistry& registry) {
  for (const auto& p : registry.params()) c.tensors.emplace_back(p.name(), p.detach());
}

void append_optimizer(Checkpoint& c, const AdamW& opt) {
  const auto params = opt.params();
  for (std::size_t i = 0; i < params.size(); ++i) {
    c.tensors.emplace_back("opt.m." + params[i].name(),
                           Tensor::from_data(params[i].shape(), opt.first_moments()[i]));
    c.tensors.emplace_back("opt.v." + params[i].name(),
                           Tensor::from_data(params[i].shape(), opt.second_moments()[i]));
  }
  c.set_int("opt.step", opt.step_count());
}

/// Copies checkpointed tensors onto the freshly built model's parameters,
/// matching every registry entry by name and shape.
void restore_params(const ParamRegistry& registry, const Checkpoint& c) {
  for (const auto& p : registry.params()) {
    const Tensor* stored = c.find_tensor(p.name());
    if (!stored) throw std::runtime_error("checkpoint: missing parameter '" + p.name() + "'");
    if (stored->shape() != p.shape()) {
      throw std::runtime_error("checkpoint: parameter '" + p.name() + "' has shape " +
                               shape_str(stored->shape()) + ", expected " +
                               shape_str(p.shape()));
    }
    Tensor handle = p;
    handle.overwrite_data(stored->data());
  }
}

void store_train_config(Checkpoint& c, const TrainConfig& cfg) {
  c.set_int("train.steps", cfg.steps);
  c.set_int("train.batch", cfg.batch);
  c.set_double("train.lr", cfg.lr);
  c.set_double("train.weight_decay", cfg.weight_decay);
  c.set_double("train.beta1", cfg.beta1);
  c.set_double("train.beta2", cfg.beta2);
  c.set_double("train.kl_warmup_fraction", cfg.kl_warmup_fraction);
  c.set_int("train.eval_every", cfg.eval_every);
  c.set_double("train.clip_norm", cfg.clip_norm);
  c.set_int("train.max_len", cfg.max_len);
  c.set_int("train.holdout_docs", cfg.holdout_docs);
}

}  // namespace

std::vector<TokenSeq> encode_corpus(std::span<const std::string> docs, const Vocabulary& vocab,
                                    int max_len) {
  std::vector<TokenSeq> out;
  out.reserve(docs.size());
  for (const auto& d : docs) out.push_back(encode_document(d, vocab, max_len));
  return out;
}

CorpusSplit split_corpus(std::vector<TokenSeq> docs, int holdout_docs) {
  CorpusSplit split;
  const auto n = static_cast<std::int64_t>(docs.size());
  const std::int64_t h = std::clamp<std::int64_t>(holdout_docs, 0, n / 2);
  split.holdout.assign(docs.begin() + (n - h), docs.end());
  docs.resize(static_cast<std::size_t>(n - h));
  split.train = std::move(docs);
  if (split.train.empty()) throw std::invalid_argument("split_corpus: no training documents");
  return split;
}

std::string vocab_to_string(const Vocabulary& vocab) {
  std::string out;
  for (std::size_t i = 0; i < vocab.tokens.size(); ++i) {
    if (i) out += ' ';
    out += vocab.tokens[i];
  }
  return out;
}

Vocabulary vocab_from_string(const std::string& packed) {
  Vocabulary v;
  std::istringstream in(packed);
  std::string tok;
  while (in >> tok) {
    v.index.emplace(tok, v.size());
    v.tokens.push_back(tok);
  }
  if (v.size() < 4) throw std::runtime_error("checkpoint: malformed vocabulary block");
  return v;
}

// ---------------------------------------------------------------------------
// Checkpoint adapters
// ---------------------------------------------------------------------------

Checkpoint vae_to_checkpoint(const TextVae& vae, const Vocabulary& vocab, std::uint64_t seed,
                             std::int64_t steps_done, const AdamW* optimizer) {
  Checkpoint c;
  c.set("stage", "vae");
  c.set("vocab", vocab_to_string(vocab));
  c.set_int("vocab_size", vae.config.vocab_size);
  c.set_int("latent_dim", vae.config.latent_dim);
  c.set_double("beta", vae.config.beta);
  c.set_double("lambda", vae.config.lambda_repa);
  c.set_int("repa_layer_offset", vae.config.repa_layer_offset);
  c.set_int("teacher_layers", vae.config.teacher_layers);
  c.set_int("teacher_dim", vae.config.teacher_dim);
  c.set_double("logvar_min", vae.config.logvar_min);
  c.set_double("logvar_max", vae.config.logvar_max);
  store_transformer_config(c, "encoder", vae.config.encoder);
  store_transformer_config(c, "decoder", vae.config.decoder);
  c.set_int("rng.master_seed", static_cast<std::int64_t>(seed));
  c.set_int("rng.steps_completed", steps_done);
  append_params(c, vae.params);
  if (optimizer) append_optimizer(c, *optimizer);
  return c;
}

LoadedVae vae_from_checkpoint(const Checkpoint& c) {
  if (c.get("stage") != "vae") {
    throw std::runtime_error("checkpoint: expected a VAE checkpoint, found stage '" +
                             c.get("stage") + "'");
  }
  VaeConfig cfg;
  cfg.vocab_size = static_cast<int>(c.get_int("vocab_size"));
  cfg.latent_dim = static_cast<int>(c.get_int("latent_dim"));
  cfg.beta = static_cast<float>(c.get_double("beta"));
  cfg.lambda_repa = static_cast<float>(c.get_double("lambda"));
  cfg.repa_layer_offset = static_cast<int>(c.get_int("repa_layer_offset"));
  cfg.teacher_layers = static_cast<int>(c.get_int("teacher_layers"));
  cfg.teacher_dim = static_cast<int>(c.get_int("teacher_dim"));
  cfg.logvar_min = static_cast<float>(c.get_double("logvar_min"));
  cfg.logvar_max = static_cast<float>(c.get_double("logvar_max"));
  cfg.encoder = load_transformer_config(c, "encoder");
  cfg.decoder = load_transformer_config(c, "decoder");

  LoadedVae out{make_text_vae(cfg, 0), vocab_from_string(c.get("vocab"))};
  if (out.vocab.size() != cfg.vocab_size) {
    throw std::runtime_error("checkpoint: vocabulary size disagrees with vocab_size key");
  }
  restore_params(out.model.params, c);
  return out;
}

Checkpoint dit_to_checkpoint(const DitModel& dit, std::uint64_t seed, std::int64_t steps_done,
                             const AdamW* optimizer) {
  Checkpoint c;
  c.set("stage", "dit");
  c.set_int("latent_dim", dit.config.latent_dim);
  c.set("schedule", schedule_kind_name(dit.config.schedule.kind));
  c.set_double("schedule_std", dit.config.schedule.std);
  c.set_double("p_uncond", dit.config.p_uncond);
  c.set_int("timestep_conditioning", dit.config.timestep_conditioning ? 1 : 0);
  store_transformer_config(c, "backbone", dit.config.backbone);
  c.set_int("rng.master_seed", static_cast<std::int64_t>(seed));
  c.set_int("rng.steps_completed", steps_done);
  if (!dit.has_latent_stats) {
    throw std::runtime_error("dit_to_checkpoint: latent standardization statistics missing");
  }
  c.tensors.emplace_back("latent.mean", dit.latent_mean);
  c.tensors.emplace_back("latent.std", dit.latent_std);
  append_params(c, dit.params);
  if (optimizer) append_optimizer(c, *optimizer);
  return c;
}

DitModel dit_from_checkpoint(const Checkpoint& c) {
  if (c.get("stage") != "dit") {
    throw std::runtime_error("checkpoint: expected a DiT checkpoint, found stage '" +
                             c.get("stage") + "'");
  }
  DitConfig cfg;
  cfg.latent_dim = static_cast<int>(c.get_int("latent_dim"));
  cfg.schedule = parse_schedule(c.get("schedule"), c.get_double("schedule_std"));
  cfg.p_uncond = c.get_double("p_uncond");
  cfg.timestep_conditioning = c.get_int("timestep_conditioning") != 0;
  cfg.backbone = load_transformer_config(c, "backbone");

  DitModel dit = make_dit(cfg, 0);
  restore_params(dit.params, c);
  dit.latent_mean = c.tensor("latent.mean").detach();
  dit.latent_std = c.tensor("latent.std").detach();
  dit.has_latent_stats = true;
  return dit;
}

// ---------------------------------------------------------------------------
// Stage one: VAE
// ---------------------------------------------------------------------------

VaeTrainOutput train_vae(std::span<const std::string> corpus, VaeConfig vae_config,
                         const TrainConfig& train_config, const LogSink& log) {
  Vocabulary vocab = build_vocab(corpus);
  vae_config.vocab_size = vocab.size();
  CorpusSplit split =
      split_corpus(encode_corpus(corpus, vocab, train_config.max_len), train_config.holdout_docs);

  TextVae vae = make_text_vae(vae_config, train_config.seed);
  Teacher teacher;
  const bool use_teacher = vae_config.lambda_repa != 0.0f;
  if (use_teacher) {
    teacher = make_teacher(vocab.size(), vae_config.teacher_layers, vae_config.teacher_dim);
  }

  AdamW optimizer(vae.params.params(),
                  AdamWConfig{train_config.lr, train_config.beta1, train_config.beta2, 1e-8f,
                              train_config.weight_decay});
  VaeBatchIterator iterator(split.train, VaeBatchConfig{train_config.batch,
                                                        train_config.max_len, 4,
                                                        train_config.seed});
  Rng noise = Rng::stream(train_config.seed, "noise.vae");

  const auto batch_size = static_cast<std::size_t>(train_config.batch);
  std::vector<GradientRecord> records(batch_size);
  std::vector<std::array<float, 4>> losses(batch_size);
  float last_ce = 0.0f, last_repa = 0.0f, min_repa = 0.0f;

  for (std::int64_t step = 0; step < train_config.steps; ++step) {
    const float beta_eff = kl_weight(step, train_config.steps, train_config.kl_warmup_fraction,
                                     vae_config.beta);
    TokenBatch batch = iterator.next();
    parallel_for(batch_size, [&](std::size_t i) {
      Rng rng = noise.split(static_cast<std::uint64_t>(step), i);
      VaeLossBreakdown b =
          vae_training_loss(vae, batch.seqs[i], use_teacher ? &teacher : nullptr, rng, beta_eff,
                            vae_config.lambda_repa);
      records[i] = backward(b.total);
      losses[i] = {b.ce, b.kl, b.repa, b.total_value};
    });

    GradientRecord grad;
    std::array<double, 4> sums{};
    for (std::size_t i = 0; i < batch_size; ++i) {
      grad.accumulate(records[i], 1.0f / static_cast<float>(batch_size));
      for (int j = 0; j < 4; ++j) sums[static_cast<std::size_t>(j)] += losses[i][static_cast<std::size_t>(j)];
      records[i] = GradientRecord{};
    }
    const double norm = global_grad_norm(vae.params.params(), grad);
    optimizer.step(grad, clip_scale(norm, train_config.clip_norm));

    last_ce = static_cast<float>(sums[0] / double(batch_size));
    last_repa = static_cast<float>(sums[2] / double(batch_size));
    min_repa = std::min(min_repa, last_repa);
    if (train_config.eval_every > 0 &&
        (step % train_config.eval_every == 0 || step + 1 == train_config.steps)) {
      emit(log, format_line("step=%lld ce=%.6g kl=%.6g repa=%.6g total=%.6g beta=%.4g",
                            static_cast<long long>(step), sums[0] / double(batch_size),
                            sums[1] / double(batch_size), sums[2] / double(batch_size),
                            sums[3] / double(batch_size), double(beta_eff)));
    }
  }

  VaeTrainOutput out{vae_to_checkpoint(vae, vocab, train_config.seed, train_config.steps,
                                       train_config.save_optimizer_state ? &optimizer : nullptr),
                     std::move(vae), std::move(vocab), std::move(split.holdout), last_ce,
                     last_repa, min_repa};
  store_train_config(out.checkpoint, train_config);
  return out;
}

// ---------------------------------------------------------------------------
// Stage two: DiT
// ---------------------------------------------------------------------------

DitTrainOutput train_dit(const Checkpoint& vae_checkpoint, std::span<const std::string> corpus,
                         DitConfig dit_config, DitBatchConfig split_config,
                         const TrainConfig& train_config, const LogSink& log) {
  LoadedVae loaded = vae_from_checkpoint(vae_checkpoint);
  const TextVae& vae = loaded.model;
  dit_config.latent_dim = vae.config.latent_dim;

  CorpusSplit split = split_corpus(encode_corpus(corpus, loaded.vocab, train_config.max_len),
                                   train_config.holdout_docs);

  DitModel dit = make_dit(dit_config, train_config.seed);

  // Latent standardization statistics from a held-out encoding pass, frozen
  // into the checkpoint before any training step.
  {
    NoGradGuard frozen;
    Rng stats_rng = Rng::stream(train_config.seed, "noise.latent_stats");
    std::vector<Tensor> latents;
    const auto& source = split.holdout.empty() ? split.train : split.holdout;
    latents.reserve(source.size());
    for (std::size_t i = 0; i < source.size(); ++i) {
      EncodeResult enc = vae_encode(vae, source[i]);
      Rng rng = stats_rng.split(i);
      latents.push_back(vae_reparameterize(enc.posterior, rng));
    }
    LatentStats stats = compute_latent_stats(latents);
    dit.latent_mean = stats.mean;
    dit.latent_std = stats.std;
    dit.has_latent_stats = true;
  }
  const LatentStats stats{dit.latent_mean, dit.latent_std};

  AdamW optimizer(dit.params.params(),
                  AdamWConfig{train_config.lr, train_config.beta1, train_config.beta2, 1e-8f,
                              train_config.weight_decay});
  split_config.batch = train_config.batch;
  split_config.seed = train_config.seed;
  DitBatchIterator iterator(split.train, split_config);
  Rng noise = Rng::stream(train_config.seed, "noise.dit");
  Rng dropout = Rng::stream(train_config.seed, "dropout.dit");

  const auto batch_size = static_cast<std::size_t>(train_config.batch);
  std::vector<GradientRecord> records(batch_size);
  std::vector<float> losses(batch_size);

  for (std::int64_t step = 0; step < train_config.steps; ++step) {
    std::vector<SplitSample> batch = iterator.next();
    parallel_for(batch_size, [&](std::size_t i) {
      Rng sample_noise = noise.split(static_cast<std::uint64_t>(step), i);
      Rng sample_dropout = dropout.split(static_cast<std::uint64_t>(step), i);

      LatentSplitSample latents;
      {
        NoGradGuard frozen;
        auto [ctx_enc, tgt_enc] = encode_split(vae, batch[i].context, batch[i].target);
        Rng ctx_rng = sample_noise.split(2);
        Rng tgt_rng = sample_noise.split(3);
        Tensor z_ctx = vae_reparameterize(ctx_enc.posterior, ctx_rng);
        Tensor z_tgt = vae_reparameterize(tgt_enc.posterior, tgt_rng);
        latents.context = z_ctx.shape()[0] > 0 ? latent_standardize(z_ctx, stats)
                                               : Tensor::zeros({0, dit.config.latent_dim});
        latents.target = latent_standardize(z_tgt, stats);
      }

      VelocityModelFn velocity = [&dit](const Tensor& z_t, double t, const Tensor& z_c) {
        return model_velocity(dit, z_t, t, z_c);
      };
      Tensor loss = cfm_sample_loss(velocity, latents, dit.config.schedule, dit.config.p_uncond,
                                    sample_noise, sample_dropout);
      records[i] = backward(loss);
      losses[i] = loss.item();
    });

    GradientRecord grad;
    double loss_sum = 0.0;
    for (std::size_t i = 0; i < batch_size; ++i) {
      grad.accumulate(records[i], 1.0f / static_cast<float>(batch_size));
      loss_sum += losses[i];
      records[i] = GradientRecord{};
    }
    const double norm = global_grad_norm(dit.params.params(), grad);
    optimizer.step(grad, clip_scale(norm, train_config.clip_norm));

    if (train_config.eval_every > 0 &&
        (step % train_config.eval_every == 0 || step + 1 == train_config.steps)) {
      emit(log, format_line("step=%lld cfm=%.6g", static_cast<long long>(step),
                            loss_sum / double(batch_size)));
    }
  }

  DitTrainOutput out{dit_to_checkpoint(dit, train_config.seed, train_config.steps,
                                       train_config.save_optimizer_state ? &optimizer : nullptr),
                     std::move(dit), std::move(split.holdout)};
  store_train_config(out.checkpoint, train_config);
  out.checkpoint.set_double("split_lo", split_config.split_lo);
  out.checkpoint.set_double("split_hi", split_config.split_hi);
  out.checkpoint.set_double("p_full", split_config.p_full);
  return out;
}

}  // namespace tldm
