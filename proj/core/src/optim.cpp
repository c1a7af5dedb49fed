#include "scopeformer/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace scopeformer {

const char* optimizer_name(OptimizerKind kind) {
  return kind == OptimizerKind::Adam ? "adam" : "sgd_momentum";
}

OptimizerKind parse_optimizer(const std::string& name) {
  if (name == "adam") return OptimizerKind::Adam;
  if (name == "sgd_momentum" || name == "sgd") return OptimizerKind::SgdMomentum;
  throw ConfigError("train.optimizer", "expected \"adam\" or \"sgd_momentum\", got \"" + name + "\"");
}

double global_grad_norm(const ParameterList& params) {
  double sq = 0.0;
  for (const auto& p : params) {
    for (double g : p.value.grad()) sq += g * g;
  }
  return std::sqrt(sq);
}

namespace {

std::vector<double>& buffer(std::map<std::string, std::vector<double>>& store, const NamedParameter& p) {
  auto [it, inserted] = store.try_emplace(p.name, p.value.numel(), 0.0);
  if (it->second.size() != p.value.numel()) {
    throw std::invalid_argument("optimizer state for " + p.name + " has " +
                                std::to_string(it->second.size()) + " elements, parameter has " +
                                std::to_string(p.value.numel()));
  }
  return it->second;
}

}  // namespace

double optim_step(OptimState& state, const ParameterList& params) {
  for (const auto& p : params) {
    if (!p.value.has_grad()) throw std::invalid_argument("no gradient for parameter " + p.name);
    if (p.value.grad().size() != p.value.numel()) {
      throw std::invalid_argument("gradient shape mismatch for parameter " + p.name);
    }
  }
  const auto& cfg = state.config;
  const double norm = global_grad_norm(params);
  const double clip = cfg.grad_clip > 0.0 && norm > cfg.grad_clip ? cfg.grad_clip / norm : 1.0;
  ++state.step_count;
  const double t = static_cast<double>(state.step_count);
  const double bias1 = 1.0 - std::pow(cfg.beta1, t);
  const double bias2 = 1.0 - std::pow(cfg.beta2, t);
  for (const auto& p : params) {
    Tensor param = p.value;
    auto values = param.mutable_data();
    auto grad = p.value.grad();
    auto& m = buffer(state.first, p);
    if (cfg.kind == OptimizerKind::Adam) {
      auto& v = buffer(state.second, p);
      for (std::size_t i = 0; i < values.size(); ++i) {
        const double g = grad[i] * clip;
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
        const double mhat = m[i] / bias1;
        const double vhat = v[i] / bias2;
        values[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
      }
    } else {
      for (std::size_t i = 0; i < values.size(); ++i) {
        m[i] = cfg.momentum * m[i] + grad[i] * clip;
        values[i] -= cfg.lr * m[i];
      }
    }
  }
  return norm;
}

}  // namespace scopeformer
