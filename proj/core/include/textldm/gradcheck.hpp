#ifndef TEXTLDM_GRADCHECK_HPP
#define TEXTLDM_GRADCHECK_HPP

#include <functional>

#include "textldm/tensor.hpp"

namespace tldm {

/// Central-difference gradient oracle. Evaluates `f` (a tensor -> scalar
/// function built from recorded ops) at x +/- eps per element, compares with
/// reverse-mode backward, and returns the maximum relative error with an
/// absolute floor of 1e-6 on the denominator. Kept independent of the
/// backward implementation: it only calls f's forward path.
double finite_diff_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                         float eps = 1e-2f);

/// Same oracle for a loss that reads `param` from inside a model: the
/// analytic side comes from backward(loss_fn()), the numeric side from
/// re-evaluating loss_fn with the parameter perturbed in place. The
/// parameter's values are restored before returning.
double finite_diff_check_param(const std::function<Tensor()>& loss_fn, const Tensor& param,
                               float eps = 1e-2f);

}  // namespace tldm

#endif  // TEXTLDM_GRADCHECK_HPP
