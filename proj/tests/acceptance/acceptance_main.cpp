// Acceptance suite: one pass/fail line per criterion, exit 0 only when all
// pass. Run a subset with `textldm_acceptance 3 10`.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "cli.hpp"
#include "textldm/checkpoint.hpp"
#include "textldm/corpus.hpp"
#include "textldm/eval.hpp"
#include "textldm/flowdiff.hpp"
#include "textldm/gradcheck.hpp"
#include "textldm/metrics.hpp"
#include "textldm/parallel.hpp"
#include "textldm/textvae.hpp"
#include "textldm/train.hpp"

using namespace tldm;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, ...) {
  char buf[512];
  va_list args;
  va_start(args, f);
  std::vsnprintf(buf, sizeof(buf), f, args);
  va_end(args);
  return buf;
}

// ---------------------------------------------------------------------------
// Desk-scale fixtures, built once and shared across criteria.
// ---------------------------------------------------------------------------

constexpr std::int64_t kVaeSteps = 1500;
constexpr std::int64_t kDitSteps = 4000;
constexpr int kCorpusDocs = 2000;
constexpr int kHoldoutDocs = 64;

struct Fixtures {
  std::vector<std::string> corpus;
  VaeTrainOutput vae;        // lambda = 1 run (criteria 3, 4, 10)
  bool vae_ready = false;
  VaeTrainOutput vae_plain;  // lambda = 0 run (criterion 4)
  bool vae_plain_ready = false;
  DitTrainOutput dit;        // criterion 10
  bool dit_ready = false;

  const std::vector<std::string>& get_corpus() {
    if (corpus.empty()) corpus = generate_synthetic_corpus(kCorpusDocs, 1);
    return corpus;
  }

  static VaeConfig desk_vae_config(float lambda) {
    VaeConfig cfg;
    cfg.latent_dim = 16;
    cfg.encoder = TransformerConfig{.layers = 4, .model_dim = 128, .heads = 4};
    cfg.decoder = cfg.encoder;
    cfg.beta = 1e-3f;
    cfg.lambda_repa = lambda;
    cfg.repa_layer_offset = -3;
    return cfg;
  }

  static TrainConfig desk_train_config(std::int64_t steps) {
    TrainConfig t;
    t.steps = steps;
    t.batch = 16;
    t.lr = 1e-4f;
    t.seed = 1;
    t.eval_every = 250;
    t.holdout_docs = kHoldoutDocs;
    t.max_len = 64;
    return t;
  }

  const VaeTrainOutput& get_vae() {
    if (!vae_ready) {
      std::fprintf(stderr, "[fixtures] training VAE (lambda=1, %lld steps)...\n",
                   static_cast<long long>(kVaeSteps));
      vae = train_vae(get_corpus(), desk_vae_config(1.0f), desk_train_config(kVaeSteps),
                      [](const std::string& l) { std::fprintf(stderr, "  %s\n", l.c_str()); });
      vae_ready = true;
    }
    return vae;
  }

  const VaeTrainOutput& get_vae_plain() {
    if (!vae_plain_ready) {
      std::fprintf(stderr, "[fixtures] training VAE (lambda=0, %lld steps)...\n",
                   static_cast<long long>(kVaeSteps));
      vae_plain =
          train_vae(get_corpus(), desk_vae_config(0.0f), desk_train_config(kVaeSteps),
                    [](const std::string& l) { std::fprintf(stderr, "  %s\n", l.c_str()); });
      vae_plain_ready = true;
    }
    return vae_plain;
  }

  const DitTrainOutput& get_dit() {
    if (!dit_ready) {
      const auto& v = get_vae();
      std::fprintf(stderr, "[fixtures] training DiT (%lld steps)...\n",
                   static_cast<long long>(kDitSteps));
      DitConfig cfg;
      cfg.backbone = TransformerConfig{.layers = 6, .model_dim = 192, .heads = 6};
      cfg.schedule = Schedule{ScheduleKind::LogitNormal, 1.5};
      cfg.p_uncond = 0.1;
      TrainConfig t = desk_train_config(kDitSteps);
      dit = train_dit(v.checkpoint, get_corpus(), cfg, DitBatchConfig{}, t,
                      [](const std::string& l) { std::fprintf(stderr, "  %s\n", l.c_str()); });
      dit_ready = true;
    }
    return dit;
  }
};

Fixtures g_fixtures;

// ---------------------------------------------------------------------------
// 1. Gradient oracle on the composite objectives
// ---------------------------------------------------------------------------

Outcome criterion_1() {
  double worst = 0.0;
  for (int seed = 0; seed < 20; ++seed) {
    // tiny VAE
    VaeConfig vc;
    vc.vocab_size = 8;
    vc.latent_dim = 2;
    vc.encoder = TransformerConfig{.layers = 1, .model_dim = 4, .heads = 1, .ffn_multiplier = 2};
    vc.decoder = vc.encoder;
    vc.teacher_layers = 1;
    vc.teacher_dim = 4;
    TextVae vae = make_text_vae(vc, static_cast<std::uint64_t>(seed));
    Teacher teacher = make_teacher(8, 1, 4, 1, static_cast<std::uint64_t>(seed) + 100);
    Rng token_rng(static_cast<std::uint64_t>(seed) + 500);
    std::vector<std::int32_t> tokens;
    for (int i = 0; i < 3; ++i) tokens.push_back(static_cast<std::int32_t>(4 + token_rng.next_below(4)));

    auto vae_loss = [&] {
      Rng rng(static_cast<std::uint64_t>(seed) + 900);
      return vae_training_loss(vae, tokens, &teacher, rng, 1e-3f, 1.0f).total;
    };
    for (const auto& p : vae.params.params()) {
      worst = std::max(worst, finite_diff_check_param(vae_loss, p, 3e-2f));
    }

    // tiny DiT driven by the CFM objective
    DitConfig dc;
    dc.latent_dim = 2;
    dc.backbone = TransformerConfig{.layers = 1, .model_dim = 4, .heads = 1, .ffn_multiplier = 2};
    DitModel dit = make_dit(dc, static_cast<std::uint64_t>(seed) + 200);
    Rng wrng(static_cast<std::uint64_t>(seed) + 300);
    Tensor out_w = *dit.params.find("dit.out.w");
    Tensor rand_w = Tensor::gaussian(out_w.shape(), wrng);
    out_w.overwrite_data(rand_w.data());

    std::vector<LatentSplitSample> batch;
    batch.push_back({Tensor::gaussian({2, 2}, wrng), Tensor::gaussian({3, 2}, wrng)});
    auto cfm_loss = [&] {
      Rng rng(static_cast<std::uint64_t>(seed) + 901);
      return cfm_training_loss(dit, batch, dit.config.schedule, 0.5, rng);
    };
    for (const auto& p : dit.params.params()) {
      worst = std::max(worst, finite_diff_check_param(cfm_loss, p, 3e-2f));
    }
  }
  return {worst <= 1e-3, fmt("max relative error %.3g over 20 seeds (tolerance 1e-3)", worst)};
}

// ---------------------------------------------------------------------------
// 2. KL closed form against Monte Carlo
// ---------------------------------------------------------------------------

Outcome criterion_2() {
  Rng stream(21);
  double worst = 0.0;
  for (int trial = 0; trial < 10; ++trial) {
    Rng r = stream.split(static_cast<std::uint64_t>(trial));
    const int rows = 2, d = 4;
    Tensor mu = Tensor::gaussian({rows, d}, r);
    Tensor lv = Tensor::gaussian({rows, d}, r);
    const double closed = kl_divergence(Posterior{mu, lv}).item();

    const int n = 100000;
    double acc = 0.0;
    Rng draw = r.split(777);
    for (int i = 0; i < n; ++i) {
      double term = 0.0;
      for (int row = 0; row < rows; ++row) {
        for (int c = 0; c < d; ++c) {
          const auto idx = static_cast<std::size_t>(row * d + c);
          const double m = mu.data()[idx];
          const double l = lv.data()[idx];
          const double sigma = std::exp(0.5 * l);
          const double z = m + sigma * draw.next_gaussian();
          term += (-0.5 * (z - m) * (z - m) / (sigma * sigma) - 0.5 * l) - (-0.5 * z * z);
        }
      }
      acc += term / rows;
    }
    const double mc = acc / n;
    worst = std::max(worst, std::abs(mc - closed) / std::max(std::abs(mc), 1e-9));
  }
  return {worst <= 0.02, fmt("max relative gap %.3g over 10 posteriors (tolerance 0.02)", worst)};
}

// ---------------------------------------------------------------------------
// 3. Held-out reconstruction accuracy
// ---------------------------------------------------------------------------

Outcome criterion_3() {
  const auto& vae = g_fixtures.get_vae();
  const double acc = evaluate_reconstruction(vae.model, vae.holdout);
  return {acc >= 0.99, fmt("held-out reconstruction accuracy %.4f after %lld steps (needs >= 0.99)",
                           acc, static_cast<long long>(kVaeSteps))};
}

// ---------------------------------------------------------------------------
// 4. Alignment strength without reconstruction damage
// ---------------------------------------------------------------------------

Outcome criterion_4() {
  const auto& with = g_fixtures.get_vae();
  const auto& without = g_fixtures.get_vae_plain();
  const double repa_min = with.min_repa;
  const double ce_rel = std::abs(with.final_ce - without.final_ce) /
                        std::max(1e-9, double(without.final_ce));
  const bool pass = repa_min <= -0.9 && ce_rel < 0.10;
  return {pass, fmt("alignment loss reached %.4f (needs <= -0.9); CE gap %.1f%% of the "
                    "lambda=0 run (needs < 10%%)",
                    repa_min, 100.0 * ce_rel)};
}

// ---------------------------------------------------------------------------
// 5. Straight-flow exactness of the Euler sampler
// ---------------------------------------------------------------------------

Outcome criterion_5() {
  Rng rng(5);
  Tensor z_init = Tensor::gaussian({6, 4}, rng);
  Tensor z_tgt = Tensor::gaussian({6, 4}, rng);
  VelocityFieldFn oracle = [&](const Tensor& z, double t) {
    Tensor z0 = scale(sub(z, scale(z_tgt, 1.0f - static_cast<float>(t))),
                      1.0f / static_cast<float>(t));
    return cfm_target(z0, z_tgt);
  };
  const Schedule schedule{ScheduleKind::LogitNormal, 1.5};
  double worst = 0.0;
  Tensor k1, k50;
  for (int K : {1, 50}) {
    EulerResult r = euler_integrate(oracle, z_init, inference_grid(schedule, K));
    for (std::int64_t i = 0; i < z_tgt.numel(); ++i) {
      worst = std::max(worst, double(std::abs(r.latents.data()[static_cast<std::size_t>(i)] -
                                              z_tgt.data()[static_cast<std::size_t>(i)])));
    }
    (K == 1 ? k1 : k50) = r.latents;
  }
  double k_gap = 0.0;
  for (std::int64_t i = 0; i < k1.numel(); ++i) {
    k_gap = std::max(k_gap, double(std::abs(k1.data()[static_cast<std::size_t>(i)] -
                                            k50.data()[static_cast<std::size_t>(i)])));
  }
  return {worst < 1e-5 && k_gap < 1e-5,
          fmt("max |z - z_tgt| %.2g, K=1 vs K=50 gap %.2g (tolerance 1e-5)", worst, k_gap)};
}

// ---------------------------------------------------------------------------
// 6. Guidance degeneracies
// ---------------------------------------------------------------------------

Outcome criterion_6() {
  DitConfig cfg;
  cfg.latent_dim = 4;
  cfg.backbone = TransformerConfig{.layers = 2, .model_dim = 8, .heads = 2, .ffn_multiplier = 2};
  DitModel dit = make_dit(cfg, 6);
  Rng rng(6);
  Tensor w = *dit.params.find("dit.out.w");
  Tensor rand_w = Tensor::gaussian(w.shape(), rng);
  w.overwrite_data(rand_w.data());

  bool pass = true;
  for (int trial = 0; trial < 10; ++trial) {
    Rng r = rng.split(static_cast<std::uint64_t>(trial));
    Tensor z_t = Tensor::gaussian({4, 4}, r);
    Tensor z_c = Tensor::gaussian({3, 4}, r);
    Tensor v_cond = model_velocity(dit, z_t, 0.4, z_c);
    Tensor v_null = model_velocity(dit, z_t, 0.4, Tensor::zeros({3, 4}));
    Tensor g1 = guided_velocity(dit, z_t, 0.4, z_c, 1.0);
    Tensor g0 = guided_velocity(dit, z_t, 0.4, z_c, 0.0);
    for (std::int64_t i = 0; i < z_t.numel(); ++i) {
      const auto idx = static_cast<std::size_t>(i);
      pass = pass && g1.data()[idx] == v_cond.data()[idx];
      pass = pass && g0.data()[idx] == v_null.data()[idx];
    }
  }
  return {pass, "w=1 equals the conditional branch and w=0 the unconditional branch, bit-exact"};
}

// ---------------------------------------------------------------------------
// 7. Schedule correctness
// ---------------------------------------------------------------------------

Outcome criterion_7() {
  const Schedule s{ScheduleKind::LogitNormal, 1.5};
  Rng rng(7);
  const int n = 100000;
  std::vector<double> draws(n);
  for (auto& d : draws) d = sample_timestep(s, rng);
  std::sort(draws.begin(), draws.end());
  auto erf_cdf = [](double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); };
  double ks = 0.0;
  for (int i = 0; i < n; ++i) {
    const double t = draws[static_cast<std::size_t>(i)];
    const double cdf = erf_cdf(std::log(t / (1.0 - t)) / 1.5);
    ks = std::max(ks, std::abs(cdf - double(i + 1) / n));
    ks = std::max(ks, std::abs(cdf - double(i) / n));
  }

  // closed-form inverse CDF by bisection on the erf-based CDF
  const int K = 50;
  const auto grid = inference_grid(s, K);
  double grid_err = 0.0;
  for (int i = 1; i < K; ++i) {
    const double q = double(K - i) / double(K);
    double lo = -10.0, hi = 10.0;
    for (int it = 0; it < 200; ++it) {
      const double mid = 0.5 * (lo + hi);
      (erf_cdf(mid) < q ? lo : hi) = mid;
    }
    const double expected = 1.0 / (1.0 + std::exp(-0.5 * (lo + hi) * 1.5));
    grid_err = std::max(grid_err, std::abs(grid[static_cast<std::size_t>(i)] - expected));
  }
  return {ks < 0.01 && grid_err < 1e-9,
          fmt("KS statistic %.4g (tolerance 0.01); grid error %.2g (tolerance 1e-9)", ks,
              grid_err)};
}

// ---------------------------------------------------------------------------
// 8. Condition dropout rate
// ---------------------------------------------------------------------------

Outcome criterion_8() {
  Rng rng(8);
  Tensor ctx = Tensor::gaussian({2, 4}, rng);
  int dropped = 0;
  const int n = 10000;
  VelocityModelFn probe = [&](const Tensor& z_t, double, const Tensor& z_c) {
    bool all_zero = true;
    for (float v : z_c.data()) all_zero = all_zero && v == 0.0f;
    dropped += all_zero ? 1 : 0;
    return Tensor::zeros(z_t.shape());
  };
  Rng noise = Rng::stream(8, "noise");
  Rng drop = Rng::stream(8, "dropout");
  for (int i = 0; i < n; ++i) {
    LatentSplitSample sample{ctx, Tensor::gaussian({3, 4}, rng)};
    Rng ni = noise.split(static_cast<std::uint64_t>(i));
    Rng di = drop.split(static_cast<std::uint64_t>(i));
    (void)cfm_sample_loss(probe, sample, Schedule{}, 0.1, ni, di);
  }
  const double rate = double(dropped) / n;
  return {std::abs(rate - 0.10) <= 0.01,
          fmt("empirical dropout rate %.4f over %d draws (needs 0.10 +- 0.01)", rate, n)};
}

// ---------------------------------------------------------------------------
// 9. Context/target information leakage
// ---------------------------------------------------------------------------

Outcome criterion_9() {
  VaeConfig cfg;
  cfg.vocab_size = 27;
  cfg.latent_dim = 16;
  cfg.encoder = TransformerConfig{.layers = 2, .model_dim = 32, .heads = 4};
  cfg.decoder = cfg.encoder;
  TextVae vae = make_text_vae(cfg, 9);

  Rng rng(9);
  bool pass = true;
  for (int trial = 0; trial < 20; ++trial) {
    Rng r = rng.split(static_cast<std::uint64_t>(trial));
    std::vector<std::int32_t> ctx, tgt_a, tgt_b;
    const int m = 3 + static_cast<int>(r.next_below(6));
    const int t = 2 + static_cast<int>(r.next_below(6));
    for (int i = 0; i < m; ++i) ctx.push_back(static_cast<std::int32_t>(4 + r.next_below(23)));
    for (int i = 0; i < t; ++i) tgt_a.push_back(static_cast<std::int32_t>(4 + r.next_below(23)));
    tgt_b = tgt_a;
    tgt_b[static_cast<std::size_t>(r.next_below(static_cast<std::uint64_t>(t)))] =
        static_cast<std::int32_t>(4 + r.next_below(23));

    auto [ca, ta] = encode_split(vae, ctx, tgt_a);
    auto [cb, tb] = encode_split(vae, ctx, tgt_b);
    for (std::int64_t i = 0; i < ca.posterior.mu.numel(); ++i) {
      const auto idx = static_cast<std::size_t>(i);
      pass = pass && ca.posterior.mu.data()[idx] == cb.posterior.mu.data()[idx];
      pass = pass && ca.posterior.log_var.data()[idx] == cb.posterior.log_var.data()[idx];
    }
  }
  return {pass, "context latents bit-identical under target perturbation (20 trials)"};
}

// ---------------------------------------------------------------------------
// 10. End-to-end desk-scale generation
// ---------------------------------------------------------------------------

Outcome criterion_10() {
  const auto& vae = g_fixtures.get_vae();
  const auto& dit = g_fixtures.get_dit();

  // (a) unconditional unigram TV distance
  Rng rng = Rng::stream(10, "uncond");
  std::vector<std::string> samples =
      sample_unconditional_docs(vae.model, dit.model, vae.vocab, 256, 33, 50, rng);
  const double tv = unigram_tv_distance(samples, g_fixtures.get_corpus());

  // (b) conditional ROUGE-1 against the analytic chance baseline
  EvalConfig cfg;
  cfg.steps = 50;
  cfg.cfg_scale = 7.0;
  cfg.seed = 10;
  EvalReport report = continuation_eval(vae.model, vae.vocab, dit.model, dit.holdout, cfg);

  // chance baseline: E[F1] of an i.i.d. grammar-unigram sampler against the
  // actual references, exact binomial expectation
  const auto unigram = grammar::unigram_distribution();
  Rng stream = Rng::stream(cfg.seed, "eval");
  double expected_f1 = 0.0;
  for (std::size_t i = 0; i < dit.holdout.size(); ++i) {
    const auto& doc = dit.holdout[i];
    Rng r = stream.split(i);
    const auto len = static_cast<std::int64_t>(doc.size());
    const double u = cfg.split_lo + (cfg.split_hi - cfg.split_lo) * r.next_double();
    const auto m = std::clamp<std::int64_t>(
        static_cast<std::int64_t>(std::llround(u * double(len))), 1, len - 1);
    TokenSeq target(doc.begin() + m, doc.end());
    TokenSeq ref = truncate_at_eos(target);
    const int hyp_len = static_cast<int>(target.size());

    std::map<std::string, int> ref_counts;
    for (auto id : ref) ++ref_counts[vae.vocab.word(id)];
    double e_overlap = 0.0;
    for (const auto& [w, r_w] : ref_counts) {
      const double p = unigram.count(w) ? unigram.at(w) : 0.0;
      double prob_ge = 1.0;
      double pmf = std::pow(1.0 - p, hyp_len);
      double e = 0.0;
      for (int k = 1; k <= r_w; ++k) {
        prob_ge -= pmf;
        e += prob_ge;
        pmf *= (double(hyp_len - k + 1) / double(k)) * (p / (1.0 - p));
      }
      e_overlap += e;
    }
    if (!ref.empty() && hyp_len > 0) {
      expected_f1 += 2.0 * e_overlap / (double(ref.size()) + double(hyp_len));
    }
  }
  expected_f1 /= double(dit.holdout.size());

  const double margin = report.r1.f1 - expected_f1;
  const bool pass = tv < 0.15 && margin >= 0.10;
  return {pass, fmt("unconditional TV %.4f (needs < 0.15); ROUGE-1 f1 %.4f vs chance %.4f, "
                    "margin %.4f (needs >= 0.10)",
                    tv, report.r1.f1, expected_f1, margin)};
}

// ---------------------------------------------------------------------------
// 11. Length-invariant NFE
// ---------------------------------------------------------------------------

Outcome criterion_11() {
  DitConfig cfg;
  cfg.latent_dim = 4;
  cfg.backbone = TransformerConfig{.layers = 1, .model_dim = 8, .heads = 2, .ffn_multiplier = 2,
                                   .max_positions = 512};
  DitModel dit = make_dit(cfg, 11);
  Rng rng(11);
  Tensor z_c = Tensor::gaussian({4, 4}, rng);
  const int K = 50;
  bool pass = true;
  std::ostringstream detail;
  for (int len : {8, 32, 128}) {
    Rng r = rng.split(static_cast<std::uint64_t>(len));
    EulerResult res = euler_sample(dit, z_c, len, K, 7.0, r);
    pass = pass && res.nfe == 2 * K;
    detail << "len " << len << ": nfe " << res.nfe << "; ";
  }
  return {pass, detail.str() + fmt("(needs 2K = %d at every length)", 2 * K)};
}

// ---------------------------------------------------------------------------
// 12. ROUGE oracle
// ---------------------------------------------------------------------------

Outcome criterion_12() {
  bool pass = true;

  RougeScore a = rouge_n("the cat sat", "the cat ran", 1);
  pass = pass && std::abs(a.recall - 2.0 / 3.0) < 1e-12 &&
         std::abs(a.precision - 2.0 / 3.0) < 1e-12 && std::abs(a.f1 - 2.0 / 3.0) < 1e-12;

  RougeScore b = rouge_l("a b c d", "a c");
  pass = pass && std::abs(b.recall - 0.5) < 1e-12 && std::abs(b.precision - 1.0) < 1e-12 &&
         std::abs(b.f1 - 2.0 / 3.0) < 1e-12;

  RougeScore ident = rouge_n("x y z", "x y z", 2);
  pass = pass && ident.f1 == 1.0;
  RougeScore empty = rouge_l("a b", "");
  pass = pass && empty.f1 == 0.0;

  // brute-force LCS enumeration on 200 random pairs of length <= 8
  Rng rng(12);
  int checked = 0;
  for (int trial = 0; trial < 200; ++trial) {
    Rng r = rng.split(static_cast<std::uint64_t>(trial));
    auto make_tokens = [&](std::size_t len) {
      std::vector<std::string> out(len);
      for (auto& w : out) w = std::string(1, static_cast<char>('a' + r.next_below(3)));
      return out;
    };
    const auto x = make_tokens(1 + r.next_below(8));
    const auto y = make_tokens(1 + r.next_below(8));

    std::size_t best = 0;
    const auto& shorter = x.size() <= y.size() ? x : y;
    const auto& longer = x.size() <= y.size() ? y : x;
    for (std::size_t mask = 0; mask < (1ull << shorter.size()); ++mask) {
      std::vector<std::string> sub;
      for (std::size_t i = 0; i < shorter.size(); ++i) {
        if (mask & (1ull << i)) sub.push_back(shorter[i]);
      }
      if (sub.size() <= best) continue;
      std::size_t j = 0;
      for (const auto& w : longer) {
        if (j < sub.size() && w == sub[j]) ++j;
      }
      if (j == sub.size()) best = sub.size();
    }
    RougeScore s = rouge_l(x, y);
    pass = pass && std::abs(s.recall - double(best) / double(x.size())) < 1e-12;
    pass = pass && std::abs(s.precision - double(best) / double(y.size())) < 1e-12;
    ++checked;
  }
  return {pass, fmt("hand examples exact; LCS matches brute force on %d random pairs", checked)};
}

// ---------------------------------------------------------------------------
// 13. Determinism and persistence
// ---------------------------------------------------------------------------

Outcome criterion_13() {
  auto corpus = generate_synthetic_corpus(96, 13);
  VaeConfig cfg;
  cfg.latent_dim = 4;
  cfg.encoder = TransformerConfig{.layers = 1, .model_dim = 16, .heads = 2, .ffn_multiplier = 2};
  cfg.decoder = cfg.encoder;
  cfg.teacher_layers = 2;
  cfg.teacher_dim = 16;
  TrainConfig t;
  t.steps = 25;
  t.batch = 4;
  t.eval_every = 0;
  t.holdout_docs = 8;
  t.max_len = 32;

  auto run_a = train_vae(corpus, cfg, t);
  auto run_b = train_vae(corpus, cfg, t);
  const bool ckpt_identical =
      serialize_checkpoint(run_a.checkpoint) == serialize_checkpoint(run_b.checkpoint);

  // save -> load -> save byte identity
  const auto bytes = serialize_checkpoint(run_a.checkpoint);
  const bool resave_identical = serialize_checkpoint(parse_checkpoint(bytes)) == bytes;

  // loss on a fixed batch is bit-exact across the round trip
  LoadedVae loaded = vae_from_checkpoint(parse_checkpoint(bytes));
  std::vector<std::int32_t> tokens = encode_document(corpus[0], run_a.vocab, 32);
  Teacher teacher = make_teacher(run_a.vocab.size(), cfg.teacher_layers, cfg.teacher_dim);
  Rng ra(13), rb(13);
  const float loss_a = vae_training_loss(run_a.model, tokens, &teacher, ra, 1e-3f, 1.0f).total_value;
  const float loss_b = vae_training_loss(loaded.model, tokens, &teacher, rb, 1e-3f, 1.0f).total_value;
  const bool loss_identical = loss_a == loss_b;

  // a DiT stage and a full sample command, twice, byte-identical stdout
  DitConfig dc;
  dc.backbone = TransformerConfig{.layers = 1, .model_dim = 16, .heads = 2, .ffn_multiplier = 2};
  auto dit_a = train_dit(run_a.checkpoint, corpus, dc, DitBatchConfig{}, t);
  auto dit_b = train_dit(run_a.checkpoint, corpus, dc, DitBatchConfig{}, t);
  const bool dit_identical =
      serialize_checkpoint(dit_a.checkpoint) == serialize_checkpoint(dit_b.checkpoint);

  const std::string vae_path = "/tmp/tldm_acc13_vae.tldm";
  const std::string dit_path = "/tmp/tldm_acc13_dit.tldm";
  save_checkpoint(run_a.checkpoint, vae_path);
  save_checkpoint(dit_a.checkpoint, dit_path);
  auto sample_once = [&] {
    std::ostringstream out, err;
    const int code = tldm::cli::run({"sample", "--vae", vae_path, "--dit", dit_path, "--prompt",
                                     "the red cat", "--len", "8", "--steps", "50", "--cfg", "7",
                                     "--seed", "1"},
                                    out, err);
    return std::make_pair(code, out.str());
  };
  const auto sample_a = sample_once();
  const auto sample_b = sample_once();
  std::remove(vae_path.c_str());
  std::remove(dit_path.c_str());
  const bool stdout_identical =
      sample_a.first == 0 && sample_b.first == 0 && sample_a.second == sample_b.second;

  const bool pass =
      ckpt_identical && resave_identical && loss_identical && dit_identical && stdout_identical;
  return {pass, fmt("ckpt identical: %s; resave identical: %s; loss bit-exact: %s; dit "
                    "identical: %s; stdout identical: %s",
                    ckpt_identical ? "yes" : "no", resave_identical ? "yes" : "no",
                    loss_identical ? "yes" : "no", dit_identical ? "yes" : "no",
                    stdout_identical ? "yes" : "no")};
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));

  const std::vector<std::pair<int, std::function<Outcome()>>> criteria = {
      {1, criterion_1},  {2, criterion_2},  {3, criterion_3},  {4, criterion_4},
      {5, criterion_5},  {6, criterion_6},  {7, criterion_7},  {8, criterion_8},
      {9, criterion_9},  {10, criterion_10}, {11, criterion_11}, {12, criterion_12},
      {13, criterion_13},
  };

  int failures = 0;
  for (const auto& [id, fn] : criteria) {
    if (!only.empty() && !only.count(id)) continue;
    const auto start = std::chrono::steady_clock::now();
    Outcome outcome;
    try {
      outcome = fn();
    } catch (const std::exception& e) {
      outcome = {false, std::string("exception: ") + e.what()};
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::printf("criterion %2d: %s — %s [%.1fs]\n", id, outcome.pass ? "PASS" : "FAIL",
                outcome.detail.c_str(), secs);
    std::fflush(stdout);
    failures += outcome.pass ? 0 : 1;
  }
  if (failures) std::printf("%d criterion(s) failed\n", failures);
  return failures == 0 ? 0 : 1;
}
