#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "scopeformer/rng.hpp"
#include "scopeformer/tensor.hpp"

namespace scopeformer {

struct NamedParameter {
  std::string name;
  Tensor value;
};

using ParameterList = std::vector<NamedParameter>;

std::size_t total_elements(const ParameterList& params);

/// Uniform in +-sqrt(3 / fan_in): unit-variance preserving for linear maps.
Tensor fan_in_uniform(Shape shape, std::size_t fan_in, Rng& rng, bool requires_grad = true);

/// Invalid configuration; `path()` is the dotted field path, e.g. "model.vit.heads".
class ConfigError : public std::invalid_argument {
 public:
  ConfigError(std::string path, const std::string& message)
      : std::invalid_argument(path + ": " + message), path_(std::move(path)) {}

  const std::string& path() const { return path_; }

 private:
  std::string path_;
};

}  // namespace scopeformer
