#include "scopeformer/grad_check.hpp"

#include <algorithm>
#include <cmath>

namespace scopeformer {

namespace {

double eval_scalar(const std::function<Tensor()>& f) {
  NoGradGuard guard;
  const Tensor out = f();
  if (out.numel() != 1) {
    throw ShapeError("grad_check: function must be scalar-valued, got " +
                     shape_to_string(out.shape()));
  }
  return out.item();
}

}  // namespace

GradCheckReport grad_check(const std::function<Tensor()>& f, std::span<Tensor> leaves,
                           double h, double tol) {
  const double first = eval_scalar(f);
  const double second = eval_scalar(f);
  if (first != second && !(std::isnan(first) && std::isnan(second))) {
    throw NonDeterministicError("grad_check: two forward passes disagree");
  }

  for (auto& leaf : leaves) {
    if (!leaf.is_leaf()) throw std::invalid_argument("grad_check: inputs must be leaf tensors");
    leaf.set_requires_grad(true);
    leaf.zero_grad();
  }
  backward(f());

  GradCheckReport report;
  for (auto& leaf : leaves) {
    std::vector<double> analytic(leaf.numel(), 0.0);
    if (leaf.has_grad()) std::copy(leaf.grad().begin(), leaf.grad().end(), analytic.begin());
    auto values = leaf.mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + h;
      const double plus = eval_scalar(f);
      values[i] = saved - h;
      const double minus = eval_scalar(f);
      values[i] = saved;
      const double numeric = (plus - minus) / (2.0 * h);
      const double abs_err = std::abs(analytic[i] - numeric);
      const double rel_err = abs_err / std::max({1.0, std::abs(analytic[i]), std::abs(numeric)});
      report.max_abs_err = std::max(report.max_abs_err, abs_err);
      report.max_rel_err = std::max(report.max_rel_err, rel_err);
      if (!std::isfinite(rel_err)) report.max_rel_err = INFINITY;
      ++report.checked;
    }
    leaf.zero_grad();
  }
  report.pass = report.max_rel_err < tol;
  return report;
}

GradCheckReport grad_check(const std::function<Tensor(const Tensor&)>& f, Tensor x, double h,
                           double tol) {
  std::vector<Tensor> leaves{x};
  return grad_check([&f, &x] { return f(x); }, leaves, h, tol);
}

}  // namespace scopeformer
