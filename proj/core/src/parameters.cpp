#include "scopeformer/parameters.hpp"

#include <cmath>

namespace scopeformer {

std::size_t total_elements(const ParameterList& params) {
  std::size_t n = 0;
  for (const auto& p : params) n += p.value.numel();
  return n;
}

Tensor fan_in_uniform(Shape shape, std::size_t fan_in, Rng& rng, bool requires_grad) {
  const double bound = std::sqrt(3.0 / static_cast<double>(fan_in));
  auto values = rng.uniform_vector(shape_numel(shape), -bound, bound);
  return Tensor::from(std::move(shape), std::move(values), requires_grad);
}

}  // namespace scopeformer
