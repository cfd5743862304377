#ifndef TEXTLDM_FLOWDIFF_HPP
#define TEXTLDM_FLOWDIFF_HPP

#include <functional>
#include <optional>
#include <string_view>
#include <span>
#include <vector>

#include "textldm/params.hpp"
#include "textldm/tensor.hpp"
#include "textldm/transformer.hpp"

namespace tldm {

enum class ScheduleKind { Uniform, LogitNormal };

struct Schedule {
  ScheduleKind kind = ScheduleKind::LogitNormal;
  double std = 1.5;  // logit-normal only
};

Schedule parse_schedule(std::string_view kind, double std);
std::string schedule_kind_name(ScheduleKind kind);

/// Uniform: t ~ U(0,1). Logit-normal: t = sigmoid(s), s ~ N(0, std^2).
double sample_timestep(const Schedule& schedule, Rng& rng);

/// Inverse standard-normal CDF (Acklam's rational approximation refined with
/// one Newton step on the erf-based CDF; |error| well under 1e-12).
double probit(double q);

/// K+1 grid values t_K .. t_0, strictly decreasing from exactly 1 to exactly
/// 0: the schedule's inverse CDF at equispaced quantiles, so training and
/// inference share one timestep distribution. Returned in walk order
/// (index 0 holds t_K = 1).
std::vector<double> inference_grid(const Schedule& schedule, int K);

/// z_t = (1 - t) z0 + t z_tgt.
Tensor interpolate(const Tensor& z0, const Tensor& z_tgt, double t);

/// Velocity target of the linear path: z_tgt - z0, constant in t.
Tensor cfm_target(const Tensor& z0, const Tensor& z_tgt);

struct GuidanceConfig {
  double w = 7.0;
  double p_uncond = 0.1;
};

struct DitConfig {
  int latent_dim = 16;
  TransformerConfig backbone{.layers = 6, .model_dim = 192, .heads = 6};
  Schedule schedule{};
  double p_uncond = 0.1;
  /// Off by default: the velocity model conditions on the noisy state alone.
  /// When on, t is injected through per-layer adaptive-norm modulation.
  bool timestep_conditioning = false;
};

/// Velocity model over latent rows: transformer over [context ; noisy
/// target], velocity read out at target positions only. Output projection is
/// zero-initialized so a fresh model predicts zero velocity.
struct DitModel {
  DitConfig config;
  ParamRegistry params;

  Tensor in_w, in_b;  // latent_dim -> model_dim
  TransformerState backbone;
  Tensor out_w, out_b;  // model_dim -> latent_dim, zero-initialized

  // timestep conditioning (only registered when enabled)
  std::vector<Tensor> t_mod_w;  // per layer: [t_embed_dim, 2 * model_dim], zero-init
  std::vector<Tensor> t_mod_b;  // per layer: [2 * model_dim]

  // Per-channel standardization statistics frozen into the checkpoint.
  bool has_latent_stats = false;
  Tensor latent_mean;  // [latent_dim]
  Tensor latent_std;   // [latent_dim], floored at 1e-6
};

DitModel make_dit(const DitConfig& config, std::uint64_t seed);

/// v_theta([z_c ; z_t]) at the target rows. `t` is the data-fraction time of
/// the training interpolant; it is ignored unless timestep conditioning is
/// enabled. `z_c` may have zero rows (unconditional input).
Tensor model_velocity(const DitModel& dit, const Tensor& z_t, double t, const Tensor& z_c);

/// v_null + w (v_cond - v_null) with exactly two model evaluations; the
/// w = 0 and w = 1 identities hold bit-exactly by construction. The null
/// branch sees zero vectors of the same length as z_c. `nfe`, when given,
/// is incremented once per model evaluation.
Tensor guided_velocity(const DitModel& dit, const Tensor& z_t, double t, const Tensor& z_c,
                       double w, int* nfe = nullptr);

// ---------------------------------------------------------------------------
// Training objective
// ---------------------------------------------------------------------------

struct LatentSplitSample {
  Tensor context;  // [M, d] standardized latents, may be empty
  Tensor target;   // [T, d]
};

using VelocityModelFn = std::function<Tensor(const Tensor& z_t, double t, const Tensor& z_c)>;

/// Single-sample CFM term: t from the schedule, z0 ~ N(0, I), squared error
/// of the predicted velocity against z_tgt - z0, mean over target entries.
/// Condition dropout replaces the context with zero vectors (same length)
/// with probability p_uncond.
Tensor cfm_sample_loss(const VelocityModelFn& velocity, const LatentSplitSample& sample,
                       const Schedule& schedule, double p_uncond, Rng& noise_rng,
                       Rng& dropout_rng);

/// Batch mean of cfm_sample_loss driven by the model.
Tensor cfm_training_loss(const DitModel& dit, std::span<const LatentSplitSample> batch,
                         const Schedule& schedule, double p_uncond, Rng& rng);

// ---------------------------------------------------------------------------
// Sampling
// ---------------------------------------------------------------------------

struct EulerResult {
  Tensor latents;
  int nfe = 0;
  /// (grid index k, state at t_k) for each requested index; index K is the
  /// initial noise, index 0 the returned latents.
  std::vector<std::pair<int, Tensor>> trace;
};

using VelocityFieldFn = std::function<Tensor(const Tensor& z, double t)>;

/// Walks the grid from t_K = 1 (noise) to t_0 = 0, advancing the state by
/// (t_k - t_k-1) * field(z, t_k) each step. The schedule grid carries the
/// remaining-noise fraction; the advance is along the noise-to-data
/// direction that Eq-style velocity targets (z_tgt - z0) define.
EulerResult euler_integrate(const VelocityFieldFn& field, Tensor z_init,
                            std::span<const double> grid, std::span<const int> trace_at = {});

/// Full sampler: z_init ~ N(0, I) over target rows in the standardized
/// space; CFG when a guidance scale is given and context rows exist
/// (nfe = 2K), single conditional/unconditional evaluation otherwise
/// (nfe = K). The model's data-fraction time is 1 - grid value.
EulerResult euler_sample(const DitModel& dit, const Tensor& z_c, int target_len, int K,
                         std::optional<double> w, Rng& rng,
                         std::span<const int> trace_at = {});

// ---------------------------------------------------------------------------
// Latent standardization
// ---------------------------------------------------------------------------

struct LatentStats {
  Tensor mean;  // [d]
  Tensor std;   // [d], floored at 1e-6
};

/// Per-channel moments over all rows of the given latent matrices.
LatentStats compute_latent_stats(std::span<const Tensor> latents);

/// (z - mean) / std per channel; throws when the model has no stats.
Tensor latent_standardize(const Tensor& z, const LatentStats& stats);
/// Exact inverse of latent_standardize.
Tensor latent_destandardize(const Tensor& z, const LatentStats& stats);

}  // namespace tldm

#endif  // TEXTLDM_FLOWDIFF_HPP
