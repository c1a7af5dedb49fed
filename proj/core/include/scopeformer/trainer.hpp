#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "scopeformer/checkpoint.hpp"
#include "scopeformer/dataset.hpp"
#include "scopeformer/loss.hpp"
#include "scopeformer/model.hpp"
#include "scopeformer/optim.hpp"

namespace scopeformer {

struct TrainConfig {
  OptimizerConfig optimizer;
  std::size_t batch_size = 8;
  std::size_t steps = 100;
  std::uint64_t seed = 0;
  /// Evaluate on the validation set every k steps (0 = only at the end, when
  /// a validation set exists).
  std::size_t eval_every = 0;
  /// Write a checkpoint every k steps into ckpt_dir (0 = only at the end).
  std::size_t ckpt_every = 0;
  std::string ckpt_dir;
  std::string history_csv;
  std::vector<double> loss_weights{2, 1, 1, 1, 1, 1};
  double loss_eps = kDefaultLossEps;
  AccuracyMode accuracy_mode = AccuracyMode::PerLabelMean;

  bool operator==(const TrainConfig&) const = default;
};

struct StepRecord {
  std::uint64_t step = 0;
  double train_loss = 0.0;
  std::optional<double> val_loss;
  std::optional<double> val_accuracy;
};

struct History {
  std::vector<StepRecord> records;

  /// step,train_loss,val_loss,val_acc (validation columns empty when absent)
  std::string to_csv() const;
  void write_csv(const std::filesystem::path& path) const;
};

/// Non-finite loss or gradient; carries the diagnostics needed to debug it.
class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(std::uint64_t step, double lr, double grad_norm, double loss);

  std::uint64_t step;
  double lr;
  double grad_norm;
  double loss;
};

/// Canonical-JSON digest of the architecture; stored in checkpoints.
std::uint64_t config_digest(const ScopeformerConfig& config);

/// Copies "param/<name>" arrays into the model; throws CheckpointError on a
/// missing array or shape mismatch. Does not check the digest.
void load_parameters(ScopeformerModel& model, const Checkpoint& ckpt);

MetricsReport evaluate(const ScopeformerModel& model, const Manifest& data,
                       const LabelWeights& weights, double eps, std::size_t batch_size,
                       AccuracyMode mode = AccuracyMode::PerLabelMean, SampleCache* cache = nullptr);

/// Deterministic training loop. Step t trains on batch (t mod batches) of the
/// epoch permutation for epoch t / batches; dropout draws come from a stream
/// derived from (seed, t). Together with the checkpointed parameters and
/// optimizer buffers this makes resumed runs bit-identical.
class Trainer {
 public:
  Trainer(ScopeformerModel& model, TrainConfig config, Manifest train_data,
          std::optional<Manifest> val_data = std::nullopt);

  /// One optimizer update; returns the loss on the batch before the update.
  StepRecord train_step();
  /// Runs until `config.steps`, evaluating and checkpointing on schedule.
  History run();

  MetricsReport evaluate_validation();

  Checkpoint checkpoint() const;
  void restore(const Checkpoint& ckpt, bool force = false);
  void save(const std::filesystem::path& path) const;
  void resume(const std::filesystem::path& path, bool force = false);

  std::uint64_t step() const { return optim_.step_count; }
  const TrainConfig& config() const { return config_; }
  const OptimState& optimizer_state() const { return optim_; }
  double last_grad_norm() const { return last_grad_norm_; }

  /// Called after each step (and its evaluation, if any).
  std::function<void(const StepRecord&)> on_step;

 private:
  std::vector<std::size_t> batch_indices(std::uint64_t step) const;

  ScopeformerModel& model_;
  TrainConfig config_;
  Manifest train_;
  std::optional<Manifest> val_;
  LabelWeights weights_;
  LoadOptions load_;
  SampleCache train_cache_;
  SampleCache val_cache_;
  ParameterList params_;
  OptimState optim_;
  double last_grad_norm_ = 0.0;
};

}  // namespace scopeformer
