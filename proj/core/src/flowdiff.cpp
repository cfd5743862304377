#include "textldm/flowdiff.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace tldm {

namespace {

constexpr int kTimeEmbedDim = 32;

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

double normal_pdf(double x) {
  return std::exp(-0.5 * x * x) / std::sqrt(2.0 * 3.14159265358979323846);
}

/// Sinusoidal embedding of a scalar time value.
Tensor time_embedding(double t) {
  std::vector<float> e(kTimeEmbedDim);
  const int half = kTimeEmbedDim / 2;
  for (int j = 0; j < half; ++j) {
    const double freq = std::pow(10000.0, -double(j) / double(half));
    e[static_cast<std::size_t>(j)] = static_cast<float>(std::sin(t * freq));
    e[static_cast<std::size_t>(half + j)] = static_cast<float>(std::cos(t * freq));
  }
  return Tensor::from_data({kTimeEmbedDim}, std::move(e));
}

}  // namespace

Schedule parse_schedule(std::string_view kind, double std) {
  Schedule s;
  if (kind == "uniform") {
    s.kind = ScheduleKind::Uniform;
  } else if (kind == "logit_normal" || kind == "logit-normal") {
    s.kind = ScheduleKind::LogitNormal;
  } else {
    throw std::invalid_argument("unknown schedule kind: " + std::string(kind));
  }
  s.std = std;
  if (s.kind == ScheduleKind::LogitNormal && !(s.std > 0.0)) {
    throw std::invalid_argument("logit-normal schedule requires std > 0");
  }
  return s;
}

std::string schedule_kind_name(ScheduleKind kind) {
  return kind == ScheduleKind::Uniform ? "uniform" : "logit_normal";
}

double sample_timestep(const Schedule& schedule, Rng& rng) {
  if (schedule.kind == ScheduleKind::Uniform) return rng.next_double();
  return sigmoid(rng.next_gaussian() * schedule.std);
}

double probit(double q) {
  if (!(q > 0.0 && q < 1.0)) {
    throw std::invalid_argument("probit: quantile must lie strictly inside (0, 1)");
  }
  // Acklam's rational approximation.
  static const double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                             -2.759285104469687e+02, 1.383577518672690e+02,
                             -3.066479806614716e+01, 2.506628277459239e+00};
  static const double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                             -1.556989798598866e+02, 6.680131188771972e+01,
                             -1.328068155288572e+01};
  static const double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                             -2.400758277161838e+00, -2.549732539343734e+00,
                             4.374664141464968e+00,  2.938163982698783e+00};
  static const double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                             2.445134137142996e+00, 3.754408661907416e+00};
  const double plow = 0.02425;
  double x;
  if (q < plow) {
    const double u = std::sqrt(-2.0 * std::log(q));
    x = (((((c[0] * u + c[1]) * u + c[2]) * u + c[3]) * u + c[4]) * u + c[5]) /
        ((((d[0] * u + d[1]) * u + d[2]) * u + d[3]) * u + 1.0);
  } else if (q > 1.0 - plow) {
    const double u = std::sqrt(-2.0 * std::log(1.0 - q));
    x = -(((((c[0] * u + c[1]) * u + c[2]) * u + c[3]) * u + c[4]) * u + c[5]) /
        ((((d[0] * u + d[1]) * u + d[2]) * u + d[3]) * u + 1.0);
  } else {
    const double u = q - 0.5;
    const double r = u * u;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * u /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  }
  // One Newton refinement against the erf-based CDF.
  const double err = normal_cdf(x) - q;
  x -= err / normal_pdf(x);
  return x;
}

std::vector<double> inference_grid(const Schedule& schedule, int K) {
  if (K < 1) throw std::invalid_argument("inference_grid: K must be >= 1");
  std::vector<double> grid(static_cast<std::size_t>(K) + 1);
  for (int i = 0; i <= K; ++i) {
    const double q = double(K - i) / double(K);  // walk order: q = 1 down to 0
    double t;
    if (i == 0) {
      t = 1.0;
    } else if (i == K) {
      t = 0.0;
    } else if (schedule.kind == ScheduleKind::Uniform) {
      t = q;
    } else {
      t = sigmoid(probit(q) * schedule.std);
    }
    grid[static_cast<std::size_t>(i)] = t;
  }
  for (std::size_t i = 1; i < grid.size(); ++i) {
    if (!(grid[i] < grid[i - 1])) {
      throw std::runtime_error("inference_grid: grid is not strictly decreasing");
    }
  }
  return grid;
}

Tensor interpolate(const Tensor& z0, const Tensor& z_tgt, double t) {
  if (z0.shape() != z_tgt.shape()) {
    throw std::invalid_argument("interpolate: shapes disagree: " + shape_str(z0.shape()) +
                                " vs " + shape_str(z_tgt.shape()));
  }
  if (t < 0.0 || t > 1.0) throw std::invalid_argument("interpolate: t must lie in [0, 1]");
  // Keep the endpoints bit-exact.
  if (t == 0.0) return z0.is_leaf() && !z0.requires_grad() ? z0 : scale(z0, 1.0f);
  if (t == 1.0) return z_tgt.is_leaf() && !z_tgt.requires_grad() ? z_tgt : scale(z_tgt, 1.0f);
  const float tf = static_cast<float>(t);
  return add(scale(z0, 1.0f - tf), scale(z_tgt, tf));
}

Tensor cfm_target(const Tensor& z0, const Tensor& z_tgt) {
  if (z0.shape() != z_tgt.shape()) {
    throw std::invalid_argument("cfm_target: shapes disagree: " + shape_str(z0.shape()) +
                                " vs " + shape_str(z_tgt.shape()));
  }
  return sub(z_tgt, z0);
}

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

DitModel make_dit(const DitConfig& config, std::uint64_t seed) {
  if (config.latent_dim <= 0) throw std::invalid_argument("dit: latent_dim must be > 0");
  config.backbone.validate();
  if (config.schedule.kind == ScheduleKind::LogitNormal && !(config.schedule.std > 0.0)) {
    throw std::invalid_argument("dit: logit-normal schedule requires std > 0");
  }
  if (!(config.p_uncond >= 0.0 && config.p_uncond <= 1.0)) {
    throw std::invalid_argument("dit: p_uncond must lie in [0, 1]");
  }

  DitModel dit;
  dit.config = config;
  Rng init = Rng::stream(seed, "init.dit");
  const std::int64_t d = config.latent_dim;
  const std::int64_t m = config.backbone.model_dim;

  dit.in_w = dit.params.add("dit.in.w", normal_init({d, m}, init));
  dit.in_b = dit.params.add("dit.in.b", Tensor::zeros({m}));
  dit.backbone = make_transformer(config.backbone, init, dit.params, "dit");
  // Zero-initialized output projection: a fresh model predicts zero velocity.
  dit.out_w = dit.params.add("dit.out.w", Tensor::zeros({m, d}));
  dit.out_b = dit.params.add("dit.out.b", Tensor::zeros({d}));

  if (config.timestep_conditioning) {
    for (int l = 0; l < config.backbone.layers; ++l) {
      const std::string p = "dit.tmod.layer" + std::to_string(l);
      dit.t_mod_w.push_back(dit.params.add(p + ".w", Tensor::zeros({kTimeEmbedDim, 2 * m})));
      dit.t_mod_b.push_back(dit.params.add(p + ".b", Tensor::zeros({2 * m})));
    }
  }
  return dit;
}

Tensor model_velocity(const DitModel& dit, const Tensor& z_t, double t, const Tensor& z_c) {
  const std::int64_t d = dit.config.latent_dim;
  if (z_t.rank() != 2 || z_t.shape()[1] != d) {
    throw std::invalid_argument("model_velocity: target latents must be [rows, " +
                                std::to_string(d) + "], got " + shape_str(z_t.shape()));
  }
  const std::int64_t ctx_rows = z_c.defined() ? z_c.shape()[0] : 0;
  if (ctx_rows > 0 && z_c.shape()[1] != d) {
    throw std::invalid_argument("model_velocity: context latents must be [rows, " +
                                std::to_string(d) + "], got " + shape_str(z_c.shape()));
  }

  Tensor x;
  if (ctx_rows > 0) {
    const Tensor parts[] = {z_c, z_t};
    x = concat_rows(parts);
  } else {
    x = z_t;
  }
  Tensor h = linear(x, dit.in_w, dit.in_b);

  std::vector<LayerModulation> mods;
  if (dit.config.timestep_conditioning) {
    Tensor te = reshape(time_embedding(t), {1, kTimeEmbedDim});
    for (std::size_t l = 0; l < dit.t_mod_w.size(); ++l) {
      Tensor both = reshape(linear(te, dit.t_mod_w[l], dit.t_mod_b[l]),
                            {2, dit.config.backbone.model_dim});
      mods.push_back(LayerModulation{slice_rows(both, 0, 1), slice_rows(both, 1, 2)});
    }
  }

  TransformerOutput out = transformer_forward(dit.backbone, h, {}, {}, mods);
  Tensor v = linear(out.final_output, dit.out_w, dit.out_b);
  const std::int64_t total = v.shape()[0];
  return ctx_rows > 0 ? slice_rows(v, ctx_rows, total) : v;
}

Tensor guided_velocity(const DitModel& dit, const Tensor& z_t, double t, const Tensor& z_c,
                       double w, int* nfe) {
  if (w < 0.0) throw std::invalid_argument("guided_velocity: w must be >= 0");
  Tensor null_ctx = Tensor::zeros(z_c.defined() ? z_c.shape() : Shape{0, dit.config.latent_dim});
  Tensor v_null = model_velocity(dit, z_t, t, null_ctx);
  Tensor v_cond = model_velocity(dit, z_t, t, z_c);
  if (nfe) *nfe += 2;
  if (w == 0.0) return v_null;
  if (w == 1.0) return v_cond;
  return add(v_null, scale(sub(v_cond, v_null), static_cast<float>(w)));
}

// ---------------------------------------------------------------------------
// Training objective
// ---------------------------------------------------------------------------

Tensor cfm_sample_loss(const VelocityModelFn& velocity, const LatentSplitSample& sample,
                       const Schedule& schedule, double p_uncond, Rng& noise_rng,
                       Rng& dropout_rng) {
  if (!sample.target.defined() || sample.target.numel() == 0) {
    throw std::invalid_argument("cfm_sample_loss: empty target");
  }
  Rng t_rng = noise_rng.split(0);
  Rng z0_rng = noise_rng.split(1);
  const double t = sample_timestep(schedule, t_rng);
  Tensor z0 = Tensor::gaussian(sample.target.shape(), z0_rng);
  Tensor z_t = interpolate(z0, sample.target, t);

  Tensor ctx = sample.context;
  const bool has_ctx = ctx.defined() && ctx.shape()[0] > 0;
  if (has_ctx && dropout_rng.next_double() < p_uncond) {
    ctx = Tensor::zeros(ctx.shape());
  }
  if (!has_ctx) ctx = Tensor::zeros({0, sample.target.shape()[1]});

  Tensor v = velocity(z_t, t, ctx);
  Tensor diff = sub(v, cfm_target(z0, sample.target));
  return mean(mul(diff, diff));
}

Tensor cfm_training_loss(const DitModel& dit, std::span<const LatentSplitSample> batch,
                         const Schedule& schedule, double p_uncond, Rng& rng) {
  if (batch.empty()) throw std::invalid_argument("cfm_training_loss: empty batch");
  VelocityModelFn velocity = [&dit](const Tensor& z_t, double t, const Tensor& z_c) {
    return model_velocity(dit, z_t, t, z_c);
  };
  Tensor total;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    Rng noise = rng.split(i, 0);
    Rng dropout = rng.split(i, 1);
    Tensor loss = cfm_sample_loss(velocity, batch[i], schedule, p_uncond, noise, dropout);
    total = total.defined() ? add(total, loss) : loss;
  }
  return scale(total, 1.0f / static_cast<float>(batch.size()));
}

// ---------------------------------------------------------------------------
// Sampling
// ---------------------------------------------------------------------------

EulerResult euler_integrate(const VelocityFieldFn& field, Tensor z_init,
                            std::span<const double> grid, std::span<const int> trace_at) {
  if (grid.size() < 2) throw std::invalid_argument("euler_integrate: grid needs >= 2 points");
  const int K = static_cast<int>(grid.size()) - 1;
  auto want = [&trace_at](int k) {
    return std::find(trace_at.begin(), trace_at.end(), k) != trace_at.end();
  };

  EulerResult result;
  NoGradGuard frozen;
  Tensor z = z_init;
  if (want(K)) result.trace.emplace_back(K, z);
  for (int i = 0; i < K; ++i) {
    const double t_hi = grid[static_cast<std::size_t>(i)];
    const double t_lo = grid[static_cast<std::size_t>(i) + 1];
    Tensor v = field(z, t_hi);
    ++result.nfe;
    z = add(z, scale(v, static_cast<float>(t_hi - t_lo)));
    const int k = K - i - 1;
    if (want(k)) result.trace.emplace_back(k, z);
  }
  result.latents = z;
  return result;
}

EulerResult euler_sample(const DitModel& dit, const Tensor& z_c, int target_len, int K,
                         std::optional<double> w, Rng& rng, std::span<const int> trace_at) {
  if (K < 1) throw std::invalid_argument("euler_sample: K must be >= 1");
  if (target_len < 0) throw std::invalid_argument("euler_sample: target_len must be >= 0");
  const std::vector<double> grid = inference_grid(dit.config.schedule, K);
  Tensor z_init = Tensor::gaussian({target_len, dit.config.latent_dim}, rng);

  const bool has_ctx = z_c.defined() && z_c.shape()[0] > 0;
  int nfe = 0;
  VelocityFieldFn field;
  if (has_ctx && w.has_value()) {
    field = [&dit, &z_c, &w, &nfe](const Tensor& z, double grid_t) {
      return guided_velocity(dit, z, 1.0 - grid_t, z_c, *w, &nfe);
    };
  } else {
    Tensor ctx = has_ctx ? z_c : Tensor::zeros({0, dit.config.latent_dim});
    field = [&dit, ctx, &nfe](const Tensor& z, double grid_t) {
      ++nfe;
      return model_velocity(dit, z, 1.0 - grid_t, ctx);
    };
  }

  EulerResult result = euler_integrate(field, std::move(z_init), grid, trace_at);
  result.nfe = nfe;
  return result;
}

// ---------------------------------------------------------------------------
// Latent standardization
// ---------------------------------------------------------------------------

LatentStats compute_latent_stats(std::span<const Tensor> latents) {
  if (latents.empty()) throw std::invalid_argument("compute_latent_stats: no latents");
  const std::int64_t d = latents[0].shape().back();
  std::vector<double> sum(static_cast<std::size_t>(d), 0.0);
  std::vector<double> sum_sq(static_cast<std::size_t>(d), 0.0);
  std::int64_t rows = 0;
  for (const auto& z : latents) {
    if (z.rank() != 2 || z.shape()[1] != d) {
      throw std::invalid_argument("compute_latent_stats: inconsistent latent shapes");
    }
    const auto data = z.data();
    const std::int64_t n = z.shape()[0];
    for (std::int64_t r = 0; r < n; ++r) {
      for (std::int64_t c = 0; c < d; ++c) {
        const double v = data[r * d + c];
        sum[static_cast<std::size_t>(c)] += v;
        sum_sq[static_cast<std::size_t>(c)] += v * v;
      }
    }
    rows += n;
  }
  if (rows == 0) throw std::invalid_argument("compute_latent_stats: zero rows");

  std::vector<float> mean(static_cast<std::size_t>(d));
  std::vector<float> stddev(static_cast<std::size_t>(d));
  for (std::int64_t c = 0; c < d; ++c) {
    const double m = sum[static_cast<std::size_t>(c)] / double(rows);
    const double var =
        std::max(0.0, sum_sq[static_cast<std::size_t>(c)] / double(rows) - m * m);
    mean[static_cast<std::size_t>(c)] = static_cast<float>(m);
    stddev[static_cast<std::size_t>(c)] =
        std::max(static_cast<float>(std::sqrt(var)), 1e-6f);
  }
  return LatentStats{Tensor::from_data({d}, std::move(mean)),
                     Tensor::from_data({d}, std::move(stddev))};
}

namespace {

Tensor reciprocal_constant(const Tensor& t) {
  std::vector<float> v(t.data().begin(), t.data().end());
  for (auto& x : v) x = 1.0f / x;
  return Tensor::from_data(t.shape(), std::move(v));
}

void check_stats(const LatentStats& stats) {
  if (!stats.mean.defined() || !stats.std.defined()) {
    throw std::runtime_error("latent standardization statistics missing");
  }
}

}  // namespace

Tensor latent_standardize(const Tensor& z, const LatentStats& stats) {
  check_stats(stats);
  return mul(sub(z, stats.mean), reciprocal_constant(stats.std));
}

Tensor latent_destandardize(const Tensor& z, const LatentStats& stats) {
  check_stats(stats);
  return add(mul(z, stats.std), stats.mean);
}

}  // namespace tldm
