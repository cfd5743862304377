#include "textldm/params.hpp"

#include <stdexcept>

namespace tldm {

Tensor ParamRegistry::add(const std::string& name, Tensor t) {
  if (find(name) != nullptr) {
    throw std::invalid_argument("ParamRegistry: duplicate parameter name: " + name);
  }
  t.set_name(name);
  t.set_requires_grad(true);
  params_.push_back(t);
  return t;
}

const Tensor* ParamRegistry::find(const std::string& name) const {
  for (const auto& p : params_) {
    if (p.name() == name) return &p;
  }
  return nullptr;
}

std::int64_t ParamRegistry::total_elements() const {
  std::int64_t n = 0;
  for (const auto& p : params_) n += p.numel();
  return n;
}

Tensor normal_init(Shape shape, Rng& rng, float std) {
  auto n = shape_numel(shape);
  std::vector<float> v(static_cast<std::size_t>(n));
  for (auto& x : v) x = static_cast<float>(rng.next_gaussian()) * std;
  return Tensor::from_data(std::move(shape), std::move(v));
}

}  // namespace tldm
