#ifndef TEXTLDM_OPTIM_HPP
#define TEXTLDM_OPTIM_HPP

#include <cstdint>
#include <span>
#include <vector>

#include "textldm/tensor.hpp"

namespace tldm {

struct AdamWConfig {
  float lr = 1e-4f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float eps = 1e-8f;
  float weight_decay = 0.01f;
};

/// Bias-corrected adaptive update with decoupled weight decay:
/// p <- p - lr * (m_hat / (sqrt(v_hat) + eps) + wd * p).
class AdamW {
 public:
  AdamW(std::vector<Tensor> params, AdamWConfig config);

  /// One update over all parameters, in registration order. Parameters
  /// absent from the record see an exact zero gradient. `grad_scale` is
  /// applied to every gradient before the moment updates (clipping).
  void step(const GradientRecord& grads, float grad_scale = 1.0f);

  std::int64_t step_count() const { return step_count_; }
  const AdamWConfig& config() const { return config_; }
  std::span<const Tensor> params() const { return params_; }
  /// First/second moment buffers, ordered like params (for checkpointing).
  const std::vector<std::vector<float>>& first_moments() const { return m_; }
  const std::vector<std::vector<float>>& second_moments() const { return v_; }

 private:
  std::vector<Tensor> params_;
  AdamWConfig config_;
  std::vector<std::vector<float>> m_;
  std::vector<std::vector<float>> v_;
  std::int64_t step_count_ = 0;
};

/// sqrt(sum of squared gradient entries) over `params` in order, double
/// accumulation; parameters without a gradient contribute zero.
double global_grad_norm(std::span<const Tensor> params, const GradientRecord& grads);

/// Scale factor that caps the global norm at `max_norm` (1.0 when already
/// within the cap or when max_norm <= 0).
float clip_scale(double global_norm, float max_norm);

/// Linear warmup of the KL weight: ramps 0 -> beta over the first
/// warmup_fraction of total_steps, then stays at beta.
float kl_weight(std::int64_t step, std::int64_t total_steps, float warmup_fraction, float beta);

}  // namespace tldm

#endif  // TEXTLDM_OPTIM_HPP
