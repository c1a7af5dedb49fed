#include "scopeformer/loss.hpp"

#include <algorithm>

#include <cmath>
#include <iomanip>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace scopeformer {

namespace {

struct Geometry {
  std::size_t batch;
  std::size_t labels;
};

Geometry check_inputs(const Tensor& probs, const Tensor& labels, std::size_t expected_labels) {
  if (probs.rank() != 2 || probs.shape() != labels.shape()) {
    throw ShapeError("expected matching [B,L] probs and labels, got " +
                     shape_to_string(probs.shape()) + " and " + shape_to_string(labels.shape()));
  }
  const Geometry g{probs.shape()[0], probs.shape()[1]};
  if (expected_labels != 0 && g.labels != expected_labels) {
    throw ShapeError("label count " + std::to_string(g.labels) + " does not match " +
                     std::to_string(expected_labels) + " weights");
  }
  for (double y : labels.data()) {
    if (y != 0.0 && y != 1.0) throw std::invalid_argument("labels must be 0 or 1");
  }
  return g;
}

std::string format_double(double v) {
  std::ostringstream os;
  os << std::setprecision(10) << v;
  return os.str();
}

}  // namespace

LabelWeights::LabelWeights(std::vector<double> raw) : w_(std::move(raw)) {
  if (w_.empty()) throw std::invalid_argument("label weights must not be empty");
  double total = 0.0;
  for (double v : w_) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw std::invalid_argument("label weights must be >= 0");
    total += v;
  }
  if (!(total > 0.0)) throw std::invalid_argument("label weights must not all be zero");
  for (double& v : w_) v /= total;
}

LabelWeights LabelWeights::rsna_default() { return LabelWeights({2, 1, 1, 1, 1, 1}); }

LabelWeights LabelWeights::uniform(std::size_t labels) {
  return LabelWeights(std::vector<double>(labels, 1.0));
}

Tensor weighted_log_loss(const Tensor& probs, const Tensor& labels, const LabelWeights& weights,
                         double eps) {
  const auto g = check_inputs(probs, labels, weights.size());
  const auto p = probs.data();
  const auto y = labels.data();
  double total = 0.0;
  for (std::size_t b = 0; b < g.batch; ++b) {
    for (std::size_t l = 0; l < g.labels; ++l) {
      const std::size_t i = b * g.labels + l;
      const double pc = std::clamp(p[i], eps, 1.0 - eps);
      total += weights[l] * -(y[i] * std::log(pc) + (1.0 - y[i]) * std::log(1.0 - pc));
    }
  }
  const double inv_batch = 1.0 / static_cast<double>(g.batch);
  const std::vector<double> w = weights.values();
  return OpBuilder::make(
      OpKind::Custom, {1}, {total * inv_batch}, {probs, labels},
      [g, w, eps, inv_batch](std::span<const double> grad, std::span<const Tensor> in,
                             std::span<const double>) {
        if (!in[0].requires_grad()) return;
        auto gp = grad_buffer(in[0]);
        const auto p = in[0].data();
        const auto y = in[1].data();
        for (std::size_t b = 0; b < g.batch; ++b) {
          for (std::size_t l = 0; l < g.labels; ++l) {
            const std::size_t i = b * g.labels + l;
            if (p[i] < eps || p[i] > 1.0 - eps) continue;
            const double d = -y[i] / p[i] + (1.0 - y[i]) / (1.0 - p[i]);
            gp[i] += grad[0] * inv_batch * w[l] * d;
          }
        }
      },
      "weighted_log_loss");
}

const char* accuracy_mode_name(AccuracyMode mode) {
  switch (mode) {
    case AccuracyMode::PerLabelMean: return "per_label_mean";
    case AccuracyMode::ExactMatch: return "exact_match";
    case AccuracyMode::AnyLabel: return "any_label";
  }
  return "unknown";
}

AccuracyMode parse_accuracy_mode(const std::string& name) {
  if (name == "per_label_mean") return AccuracyMode::PerLabelMean;
  if (name == "exact_match") return AccuracyMode::ExactMatch;
  if (name == "any_label") return AccuracyMode::AnyLabel;
  throw std::invalid_argument("unknown accuracy mode: " + name);
}

double binary_accuracy(const Tensor& probs, const Tensor& labels, double threshold,
                       AccuracyMode mode) {
  const auto g = check_inputs(probs, labels, 0);
  const auto p = probs.data();
  const auto y = labels.data();
  auto correct = [&](std::size_t i) { return (p[i] >= threshold) == (y[i] == 1.0); };
  std::size_t hits = 0;
  switch (mode) {
    case AccuracyMode::PerLabelMean:
      for (std::size_t i = 0; i < p.size(); ++i) hits += correct(i) ? 1 : 0;
      return static_cast<double>(hits) / static_cast<double>(p.size());
    case AccuracyMode::ExactMatch:
      for (std::size_t b = 0; b < g.batch; ++b) {
        bool all = true;
        for (std::size_t l = 0; l < g.labels; ++l) all = all && correct(b * g.labels + l);
        hits += all ? 1 : 0;
      }
      return static_cast<double>(hits) / static_cast<double>(g.batch);
    case AccuracyMode::AnyLabel:
      for (std::size_t b = 0; b < g.batch; ++b) hits += correct(b * g.labels) ? 1 : 0;
      return static_cast<double>(hits) / static_cast<double>(g.batch);
  }
  return 0.0;
}

MetricsReport metrics_report(const Tensor& probs, const Tensor& labels, const LabelWeights& weights,
                             double eps, double threshold, AccuracyMode mode) {
  const auto g = check_inputs(probs, labels, weights.size());
  MetricsReport r;
  {
    NoGradGuard guard;
    r.loss = weighted_log_loss(probs, labels, weights, eps).item();
  }
  r.accuracy = binary_accuracy(probs, labels, threshold, mode);
  r.samples = g.batch;
  r.per_label_accuracy.assign(g.labels, 0.0);
  r.positives.assign(g.labels, 0);
  const auto p = probs.data();
  const auto y = labels.data();
  for (std::size_t b = 0; b < g.batch; ++b) {
    for (std::size_t l = 0; l < g.labels; ++l) {
      const std::size_t i = b * g.labels + l;
      if ((p[i] >= threshold) == (y[i] == 1.0)) r.per_label_accuracy[l] += 1.0;
      if (y[i] == 1.0) ++r.positives[l];
    }
  }
  for (auto& a : r.per_label_accuracy) a /= static_cast<double>(g.batch);
  return r;
}

std::string MetricsReport::to_text() const {
  std::ostringstream os;
  os << "samples: " << samples << '\n';
  os << "loss: " << format_double(loss) << '\n';
  os << "accuracy: " << format_double(accuracy) << '\n';
  for (std::size_t l = 0; l < per_label_accuracy.size(); ++l) {
    os << "acc_l" << l << ": " << format_double(per_label_accuracy[l]) << '\n';
  }
  for (std::size_t l = 0; l < positives.size(); ++l) {
    os << "positives_l" << l << ": " << positives[l] << '\n';
  }
  return os.str();
}

std::string MetricsReport::csv_header(std::size_t labels) {
  std::string h = "step,loss,accuracy";
  for (std::size_t l = 0; l < labels; ++l) h += ",acc_l" + std::to_string(l);
  return h;
}

std::string MetricsReport::csv_row(std::uint64_t step) const {
  std::ostringstream os;
  os << step << ',' << format_double(loss) << ',' << format_double(accuracy);
  for (double a : per_label_accuracy) os << ',' << format_double(a);
  return os.str();
}

}  // namespace scopeformer
