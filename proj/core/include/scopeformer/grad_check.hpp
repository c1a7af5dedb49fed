#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <stdexcept>
#include <vector>

#include "scopeformer/tensor.hpp"

namespace scopeformer {

struct GradCheckReport {
  double max_rel_err = 0.0;
  double max_abs_err = 0.0;
  std::size_t checked = 0;
  bool pass = true;
};

/// f was observed to return different values for identical inputs.
class NonDeterministicError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Compares backward() against central finite differences for every element
/// of every leaf. Relative error is |a - n| / max(1, |a|, |n|).
///
/// `f` must be scalar-valued and deterministic; it is evaluated twice up front
/// and a mismatch throws NonDeterministicError. Leaves are perturbed in place
/// and restored.
GradCheckReport grad_check(const std::function<Tensor()>& f, std::span<Tensor> leaves,
                           double h = 1e-5, double tol = 1e-4);

GradCheckReport grad_check(const std::function<Tensor(const Tensor&)>& f, Tensor x,
                           double h = 1e-5, double tol = 1e-4);

}  // namespace scopeformer
