#include "textldm/optim.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace tldm {

AdamW::AdamW(std::vector<Tensor> params, AdamWConfig config)
    : params_(std::move(params)), config_(config) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const auto& p : params_) {
    m_.emplace_back(static_cast<std::size_t>(p.numel()), 0.0f);
    v_.emplace_back(static_cast<std::size_t>(p.numel()), 0.0f);
  }
}

void AdamW::step(const GradientRecord& grads, float grad_scale) {
  ++step_count_;
  const float b1 = config_.beta1, b2 = config_.beta2;
  const float bc1 = 1.0f - std::pow(b1, static_cast<float>(step_count_));
  const float bc2 = 1.0f - std::pow(b2, static_cast<float>(step_count_));
  std::vector<float> updated;
  for (std::size_t pi = 0; pi < params_.size(); ++pi) {
    Tensor& p = params_[pi];
    const Tensor* g = grads.find(p);
    if (g && g->shape() != p.shape()) {
      throw std::invalid_argument("AdamW: gradient shape " + shape_str(g->shape()) +
                                  " does not match parameter " + p.name() + " " +
                                  shape_str(p.shape()));
    }
    auto& m = m_[pi];
    auto& v = v_[pi];
    const auto pd = p.data();
    updated.assign(pd.begin(), pd.end());
    const std::size_t n = updated.size();
    for (std::size_t i = 0; i < n; ++i) {
      const float gi = g ? g->data()[i] * grad_scale : 0.0f;
      m[i] = b1 * m[i] + (1.0f - b1) * gi;
      v[i] = b2 * v[i] + (1.0f - b2) * gi * gi;
      const float m_hat = m[i] / bc1;
      const float v_hat = v[i] / bc2;
      updated[i] -= config_.lr * (m_hat / (std::sqrt(v_hat) + config_.eps) +
                                  config_.weight_decay * updated[i]);
    }
    p.overwrite_data(updated);
  }
}

double global_grad_norm(std::span<const Tensor> params, const GradientRecord& grads) {
  double acc = 0.0;
  for (const auto& p : params) {
    const Tensor* g = grads.find(p);
    if (!g) continue;
    for (float x : g->data()) acc += double(x) * double(x);
  }
  return std::sqrt(acc);
}

float clip_scale(double global_norm, float max_norm) {
  if (max_norm <= 0.0f || global_norm <= double(max_norm)) return 1.0f;
  return static_cast<float>(double(max_norm) / global_norm);
}

float kl_weight(std::int64_t step, std::int64_t total_steps, float warmup_fraction, float beta) {
  if (step < 0) throw std::invalid_argument("kl_weight: step must be >= 0");
  if (warmup_fraction < 0.0f || warmup_fraction > 1.0f) {
    throw std::invalid_argument("kl_weight: warmup_fraction must lie in [0, 1]");
  }
  const auto warmup_steps =
      static_cast<std::int64_t>(std::llround(double(warmup_fraction) * double(total_steps)));
  if (warmup_steps <= 0 || step >= warmup_steps) return beta;
  return beta * static_cast<float>(double(step) / double(warmup_steps));
}

}  // namespace tldm
