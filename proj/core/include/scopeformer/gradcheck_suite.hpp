#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "scopeformer/grad_check.hpp"
#include "scopeformer/model.hpp"

namespace scopeformer {

/// One named finite-difference check over a small random instance of an op,
/// a layer, or the whole model.
struct GradCheckCase {
  std::string name;
  std::function<GradCheckReport(std::uint64_t seed, double h, double tol)> run;
};

/// Per-op cases plus an end-to-end tiny model.
const std::vector<GradCheckCase>& gradcheck_cases();
const GradCheckCase* find_gradcheck_case(const std::string& name);

/// 8x8 images, two 2-stage backbones (2x2 tokens), depth-2 ViT of width 8.
ScopeformerConfig tiny_model_config(std::uint64_t seed = 1);

}  // namespace scopeformer
