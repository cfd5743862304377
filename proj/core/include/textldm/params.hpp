#ifndef TEXTLDM_PARAMS_HPP
#define TEXTLDM_PARAMS_HPP

#include <string>
#include <vector>

#include "textldm/rng.hpp"
#include "textldm/tensor.hpp"

namespace tldm {

/// Ordered registry of a model's trainable tensors. Registration order is
/// fixed by construction order and defines the layout of checkpoints and of
/// deterministic reductions (gradient-norm accumulation, clipping).
class ParamRegistry {
 public:
  /// Registers `t` under `name`, marking it trainable. Returns the handle.
  Tensor add(const std::string& name, Tensor t);

  const std::vector<Tensor>& params() const { return params_; }
  const Tensor* find(const std::string& name) const;
  std::size_t size() const { return params_.size(); }
  std::int64_t total_elements() const;

 private:
  std::vector<Tensor> params_;
};

/// normal(0, std) initialization used for projection weights.
Tensor normal_init(Shape shape, Rng& rng, float std = 0.02f);

}  // namespace tldm

#endif  // TEXTLDM_PARAMS_HPP
