#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "scopeformer/tensor.hpp"

namespace scopeformer {

/// Per-label weights, normalized to sum to 1 at construction.
class LabelWeights {
 public:
  /// Throws std::invalid_argument on negative entries or a zero sum.
  explicit LabelWeights(std::vector<double> raw);

  /// (2,1,1,1,1,1)/7 with "any" at index 0.
  static LabelWeights rsna_default();
  static LabelWeights uniform(std::size_t labels);

  std::size_t size() const { return w_.size(); }
  double operator[](std::size_t i) const { return w_[i]; }
  const std::vector<double>& values() const { return w_; }

 private:
  std::vector<double> w_;
};

inline constexpr double kDefaultLossEps = 1e-7;

/// (1/B) sum_b sum_l w_l * BCE(clip(p, eps, 1-eps), y), differentiable in probs.
/// Probabilities outside the clip range receive zero gradient.
Tensor weighted_log_loss(const Tensor& probs, const Tensor& labels, const LabelWeights& weights,
                         double eps = kDefaultLossEps);

enum class AccuracyMode {
  PerLabelMean,  // mean over all B*L decisions
  ExactMatch,    // a sample counts only if all its labels are right
  AnyLabel,      // decision on the "any" label (index 0) only
};

const char* accuracy_mode_name(AccuracyMode mode);
AccuracyMode parse_accuracy_mode(const std::string& name);

double binary_accuracy(const Tensor& probs, const Tensor& labels, double threshold = 0.5,
                       AccuracyMode mode = AccuracyMode::PerLabelMean);

struct MetricsReport {
  double loss = 0.0;
  double accuracy = 0.0;
  std::vector<double> per_label_accuracy;
  std::vector<std::size_t> positives;
  std::size_t samples = 0;

  /// "key: value" lines.
  std::string to_text() const;
  /// step,loss,accuracy,acc_l0..acc_l{L-1}
  static std::string csv_header(std::size_t labels);
  std::string csv_row(std::uint64_t step) const;
};

MetricsReport metrics_report(const Tensor& probs, const Tensor& labels, const LabelWeights& weights,
                             double eps = kDefaultLossEps, double threshold = 0.5,
                             AccuracyMode mode = AccuracyMode::PerLabelMean);

}  // namespace scopeformer
