#include "textldm/gradcheck.hpp"

#include <cmath>
#include <stdexcept>
#include <vector>

namespace tldm {

double finite_diff_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                         float eps) {
  Tensor probe = x.detach();
  probe.set_requires_grad(true);
  Tensor loss = f(probe);
  if (loss.numel() != 1) {
    throw std::invalid_argument("finite_diff_check: f must return a scalar");
  }
  GradientRecord record = backward(loss);
  Tensor analytic = record.grad(probe);

  std::vector<float> base(x.data().begin(), x.data().end());
  double max_rel = 0.0;
  for (std::size_t i = 0; i < base.size(); ++i) {
    std::vector<float> plus = base, minus = base;
    plus[i] += eps;
    minus[i] -= eps;
    double fp, fm;
    {
      NoGradGuard ng;
      fp = f(Tensor::from_data(x.shape(), std::move(plus))).item();
      fm = f(Tensor::from_data(x.shape(), std::move(minus))).item();
    }
    const double numeric = (fp - fm) / (2.0 * double(eps));
    const double a = analytic.data()[i];
    const double denom = std::max({std::abs(numeric), std::abs(a), 1e-6});
    max_rel = std::max(max_rel, std::abs(a - numeric) / denom);
  }
  return max_rel;
}

double finite_diff_check_param(const std::function<Tensor()>& loss_fn, const Tensor& param,
                               float eps) {
  Tensor analytic = backward(loss_fn()).grad(param);

  Tensor handle = param;
  const std::vector<float> base(param.data().begin(), param.data().end());
  double max_rel = 0.0;
  std::vector<float> work = base;
  for (std::size_t i = 0; i < base.size(); ++i) {
    double fp, fm;
    {
      NoGradGuard ng;
      work[i] = base[i] + eps;
      handle.overwrite_data(work);
      fp = loss_fn().item();
      work[i] = base[i] - eps;
      handle.overwrite_data(work);
      fm = loss_fn().item();
      work[i] = base[i];
    }
    const double numeric = (fp - fm) / (2.0 * double(eps));
    const double a = analytic.data()[i];
    const double denom = std::max({std::abs(numeric), std::abs(a), 1e-6});
    max_rel = std::max(max_rel, std::abs(a - numeric) / denom);
  }
  handle.overwrite_data(base);
  return max_rel;
}

}  // namespace tldm
