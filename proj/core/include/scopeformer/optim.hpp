#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "scopeformer/parameters.hpp"

namespace scopeformer {

enum class OptimizerKind { Adam, SgdMomentum };

const char* optimizer_name(OptimizerKind kind);
OptimizerKind parse_optimizer(const std::string& name);

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::Adam;
  double lr = 3e-4;
  double momentum = 0.9;  // SGD
  double beta1 = 0.9;     // Adam
  double beta2 = 0.999;
  double eps = 1e-8;
  /// Global gradient-norm clip; 0 disables.
  double grad_clip = 0.0;

  bool operator==(const OptimizerConfig&) const = default;
};

/// Optimizer hyperparameters plus per-parameter moment buffers, keyed by
/// parameter name. Adam keeps "m" and "v"; SGD keeps "velocity".
struct OptimState {
  OptimizerConfig config;
  std::map<std::string, std::vector<double>> first;   // m or velocity
  std::map<std::string, std::vector<double>> second;  // v (Adam only)
  std::uint64_t step_count = 0;
};

double global_grad_norm(const ParameterList& params);

/// One update of every parameter in `params` from its accumulated grad.
/// Adam: m <- b1 m + (1-b1) g; v <- b2 v + (1-b2) g^2; p <- p - lr mhat / (sqrt(vhat) + eps)
/// SGD:  v <- mu v + g; p <- p - lr v
/// Throws std::invalid_argument when a parameter has no grad or its buffers
/// have the wrong size. Returns the pre-clip global gradient norm.
double optim_step(OptimState& state, const ParameterList& params);

}  // namespace scopeformer
