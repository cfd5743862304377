#include "textldm/eval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "textldm/parallel.hpp"

namespace tldm {

namespace {

std::string fmt(const char* format, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), format, v);
  return buf;
}

std::string hash_config(const EvalConfig& c) {
  std::ostringstream os;
  os << c.steps << '|' << c.cfg_scale << '|' << c.split_lo << '|' << c.split_hi << '|' << c.seed
     << '|' << c.max_samples;
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(hash_name(os.str())));
  return buf;
}

}  // namespace

TokenSeq truncate_at_eos(const TokenSeq& ids) {
  TokenSeq out;
  for (std::int32_t id : ids) {
    if (id == Vocabulary::kEos) break;
    out.push_back(id);
  }
  return out;
}

std::string EvalReport::render_deterministic() const {
  std::ostringstream os;
  os << "samples = " << samples.size() << '\n';
  os << "rouge1_f1 = " << fmt("%.6f", r1.f1) << '\n';
  os << "rouge2_f1 = " << fmt("%.6f", r2.f1) << '\n';
  os << "rougeL_f1 = " << fmt("%.6f", rl.f1) << '\n';
  os << "rouge1_precision = " << fmt("%.6f", r1.precision) << '\n';
  os << "rouge1_recall = " << fmt("%.6f", r1.recall) << '\n';
  os << "reconstruction_accuracy = " << fmt("%.6f", reconstruction_accuracy) << '\n';
  os << "mean_nfe = " << fmt("%.2f", mean_nfe) << '\n';
  os << "config_hash = " << config_hash << '\n';
  os << "index\tcontext_len\ttarget_len\tnfe\tr1_f1\tr2_f1\trL_f1\n";
  for (const auto& s : samples) {
    os << s.index << '\t' << s.context_len << '\t' << s.target_len << '\t' << s.nfe << '\t'
       << fmt("%.6f", s.r1.f1) << '\t' << fmt("%.6f", s.r2.f1) << '\t' << fmt("%.6f", s.rl.f1)
       << '\n';
  }
  return os.str();
}

EvalReport continuation_eval_core(const ContinuationSampler& sampler,
                                  std::span<const TokenSeq> testset, const Vocabulary& vocab,
                                  const EvalConfig& config) {
  if (testset.empty()) throw std::invalid_argument("continuation_eval: empty test set");
  const auto start = std::chrono::steady_clock::now();

  std::size_t n = testset.size();
  if (config.max_samples > 0) n = std::min(n, static_cast<std::size_t>(config.max_samples));

  Rng stream = Rng::stream(config.seed, "eval");
  EvalReport report;
  report.samples.resize(n);

  parallel_for(n, [&](std::size_t i) {
    const TokenSeq& doc = testset[i];
    Rng rng = stream.split(i);
    const auto len = static_cast<std::int64_t>(doc.size());
    const double u = config.split_lo + (config.split_hi - config.split_lo) * rng.next_double();
    const auto m =
        std::clamp<std::int64_t>(static_cast<std::int64_t>(std::llround(u * double(len))), 1,
                                 std::max<std::int64_t>(len - 1, 1));
    TokenSeq context(doc.begin(), doc.begin() + m);
    TokenSeq target(doc.begin() + m, doc.end());

    int nfe = 0;
    Rng sample_rng = rng.split(1);
    TokenSeq hyp = sampler(context, static_cast<int>(target.size()), sample_rng, &nfe);

    const std::string ref_text = decode(truncate_at_eos(target), vocab);
    const std::string hyp_text = decode(truncate_at_eos(hyp), vocab);

    SampleEval& s = report.samples[i];
    s.index = static_cast<int>(i);
    s.context_len = static_cast<int>(context.size());
    s.target_len = static_cast<int>(target.size());
    s.nfe = nfe;
    s.r1 = rouge_n(ref_text, hyp_text, 1);
    s.r2 = rouge_n(ref_text, hyp_text, 2);
    s.rl = rouge_l(ref_text, hyp_text);
  });

  auto mean_of = [&](auto pick) {
    RougeScore m;
    for (const auto& s : report.samples) {
      const RougeScore& r = pick(s);
      m.precision += r.precision;
      m.recall += r.recall;
      m.f1 += r.f1;
    }
    const double k = static_cast<double>(report.samples.size());
    m.precision /= k;
    m.recall /= k;
    m.f1 /= k;
    return m;
  };
  report.r1 = mean_of([](const SampleEval& s) -> const RougeScore& { return s.r1; });
  report.r2 = mean_of([](const SampleEval& s) -> const RougeScore& { return s.r2; });
  report.rl = mean_of([](const SampleEval& s) -> const RougeScore& { return s.rl; });
  for (const auto& s : report.samples) report.mean_nfe += s.nfe;
  report.mean_nfe /= static_cast<double>(report.samples.size());
  report.config_hash = hash_config(config);
  report.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() -
                                                             start)
                       .count();
  return report;
}

TokenSeq sample_continuation(const TextVae& vae, const DitModel& dit, const TokenSeq& context,
                             int target_len, int steps, std::optional<double> w, Rng& rng,
                             int* out_nfe, std::vector<std::pair<int, TokenSeq>>* trace_tokens,
                             std::span<const int> trace_at) {
  if (vae.config.latent_dim != dit.config.latent_dim) {
    throw std::runtime_error("latent dimension mismatch: VAE d=" +
                             std::to_string(vae.config.latent_dim) + ", DiT d=" +
                             std::to_string(dit.config.latent_dim));
  }
  const LatentStats stats{dit.latent_mean, dit.latent_std};

  NoGradGuard frozen;
  Tensor z_ctx;
  if (context.empty()) {
    z_ctx = Tensor::zeros({0, vae.config.latent_dim});
  } else {
    // Conditions are encoded to posterior means.
    EncodeResult enc = vae_encode(vae, context);
    z_ctx = latent_standardize(enc.posterior.mu, stats);
  }

  EulerResult res = euler_sample(dit, z_ctx, target_len, steps, w, rng, trace_at);
  if (out_nfe) *out_nfe = res.nfe;

  auto decode_latents = [&](const Tensor& z) {
    if (z.shape()[0] == 0) return TokenSeq{};
    Tensor logits = vae_decode(vae, latent_destandardize(z, stats));
    const auto data = logits.data();
    const std::int64_t rows = logits.shape()[0], vocab = logits.shape()[1];
    TokenSeq ids(static_cast<std::size_t>(rows));
    for (std::int64_t r = 0; r < rows; ++r) {
      const float* row = data.data() + r * vocab;
      std::int64_t best = 0;
      for (std::int64_t j = 1; j < vocab; ++j) {
        if (row[j] > row[best]) best = j;
      }
      ids[static_cast<std::size_t>(r)] = static_cast<std::int32_t>(best);
    }
    return ids;
  };

  if (trace_tokens) {
    for (const auto& [k, z] : res.trace) trace_tokens->emplace_back(k, decode_latents(z));
  }
  return decode_latents(res.latents);
}

EvalReport continuation_eval(const TextVae& vae, const Vocabulary& vocab, const DitModel& dit,
                             std::span<const TokenSeq> testset, const EvalConfig& config) {
  ContinuationSampler sampler = [&](const TokenSeq& context, int target_len, Rng& rng,
                                    int* out_nfe) {
    return sample_continuation(vae, dit, context, target_len, config.steps, config.cfg_scale,
                               rng, out_nfe);
  };
  EvalReport report = continuation_eval_core(sampler, testset, vocab, config);
  report.reconstruction_accuracy =
      evaluate_reconstruction(vae, testset.subspan(0, report.samples.size()));
  return report;
}

double evaluate_reconstruction(const TextVae& vae, std::span<const TokenSeq> docs) {
  if (docs.empty()) return 0.0;
  std::vector<double> acc(docs.size());
  parallel_for(docs.size(), [&](std::size_t i) {
    NoGradGuard frozen;
    EncodeResult enc = vae_encode(vae, docs[i]);
    Tensor logits = vae_decode(vae, enc.posterior.mu);
    acc[i] = reconstruction_accuracy(docs[i], logits);
  });
  double total = 0.0;
  for (double a : acc) total += a;
  return total / static_cast<double>(docs.size());
}

std::vector<std::string> sample_unconditional_docs(const TextVae& vae, const DitModel& dit,
                                                   const Vocabulary& vocab, int n_docs,
                                                   int target_len, int steps, Rng& rng) {
  std::vector<std::string> docs(static_cast<std::size_t>(n_docs));
  std::vector<Rng> rngs;
  rngs.reserve(static_cast<std::size_t>(n_docs));
  for (int i = 0; i < n_docs; ++i) rngs.push_back(rng.split(static_cast<std::uint64_t>(i)));
  parallel_for(static_cast<std::size_t>(n_docs), [&](std::size_t i) {
    TokenSeq ids = sample_continuation(vae, dit, {}, target_len, steps, std::nullopt, rngs[i]);
    docs[i] = decode(truncate_at_eos(ids), vocab);
  });
  return docs;
}

}  // namespace tldm
