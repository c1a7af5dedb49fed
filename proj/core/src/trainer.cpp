#include "scopeformer/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "scopeformer/ops.hpp"
#include "scopeformer/rng.hpp"

namespace scopeformer {

namespace {

constexpr std::uint64_t kDropoutStream = 0x64726f706f757400ULL;

std::string format_exact(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string describe_divergence(std::uint64_t step, double lr, double grad_norm, double loss) {
  std::ostringstream os;
  os << "training diverged at step " << step << ": loss=" << loss << " lr=" << lr
     << " grad_norm=" << grad_norm;
  return os.str();
}

std::vector<std::uint64_t> dims_of(const Tensor& t) {
  return {t.shape().begin(), t.shape().end()};
}

}  // namespace

TrainingDiverged::TrainingDiverged(std::uint64_t step_, double lr_, double grad_norm_, double loss_)
    : std::runtime_error(describe_divergence(step_, lr_, grad_norm_, loss_)),
      step(step_),
      lr(lr_),
      grad_norm(grad_norm_),
      loss(loss_) {}

std::string History::to_csv() const {
  std::string out = "step,train_loss,val_loss,val_acc\n";
  for (const auto& r : records) {
    out += std::to_string(r.step) + ',' + format_exact(r.train_loss) + ',';
    if (r.val_loss) out += format_exact(*r.val_loss);
    out += ',';
    if (r.val_accuracy) out += format_exact(*r.val_accuracy);
    out += '\n';
  }
  return out;
}

void History::write_csv(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << to_csv();
}

void load_parameters(ScopeformerModel& model, const Checkpoint& ckpt) {
  for (auto& p : model.parameters()) {
    const auto* a = ckpt.find("param/" + p.name);
    if (!a) throw CheckpointError(CheckpointError::Kind::Malformed, "checkpoint has no parameter " + p.name);
    if (a->dims != dims_of(p.value) || a->values.size() != p.value.numel()) {
      throw CheckpointError(CheckpointError::Kind::Malformed, "shape mismatch for parameter " + p.name);
    }
    auto dst = p.value.mutable_data();
    std::copy(a->values.begin(), a->values.end(), dst.begin());
  }
}

MetricsReport evaluate(const ScopeformerModel& model, const Manifest& data,
                       const LabelWeights& weights, double eps, std::size_t batch_size,
                       AccuracyMode mode, SampleCache* cache) {
  if (data.size() == 0) throw DataError("cannot evaluate on an empty manifest");
  NoGradGuard guard;
  LoadOptions load;
  load.image_size = model.config().image_size;
  load.num_labels = model.config().vit.num_labels;
  std::vector<double> probs;
  std::vector<double> labels;
  for (std::size_t begin = 0; begin < data.size(); begin += batch_size) {
    std::vector<std::size_t> idx;
    for (std::size_t i = begin; i < std::min(data.size(), begin + batch_size); ++i) idx.push_back(i);
    const Batch b = make_batch(data, idx, load, cache);
    const Tensor p = sigmoid(model.forward(b.images));
    probs.insert(probs.end(), p.data().begin(), p.data().end());
    labels.insert(labels.end(), b.labels.data().begin(), b.labels.data().end());
  }
  const std::size_t L = load.num_labels;
  const Tensor pt = Tensor::from({data.size(), L}, std::move(probs));
  const Tensor lt = Tensor::from({data.size(), L}, std::move(labels));
  return metrics_report(pt, lt, weights, eps, 0.5, mode);
}

Trainer::Trainer(ScopeformerModel& model, TrainConfig config, Manifest train_data,
                 std::optional<Manifest> val_data)
    : model_(model),
      config_(std::move(config)),
      train_(std::move(train_data)),
      val_(std::move(val_data)),
      weights_(config_.loss_weights),
      params_(model.trainable_parameters()) {
  if (config_.batch_size == 0) throw ConfigError("train.batch_size", "must be >= 1");
  if (train_.size() == 0) throw DataError("training manifest is empty");
  if (weights_.size() != model.config().vit.num_labels) {
    throw ConfigError("loss.weights", "expected " + std::to_string(model.config().vit.num_labels) +
                                          " weights, got " + std::to_string(weights_.size()));
  }
  load_.image_size = model.config().image_size;
  load_.num_labels = model.config().vit.num_labels;
  optim_.config = config_.optimizer;
}

std::vector<std::size_t> Trainer::batch_indices(std::uint64_t step) const {
  const std::size_t n = train_.size();
  const std::size_t per_epoch = (n + config_.batch_size - 1) / config_.batch_size;
  const std::uint64_t epoch = step / per_epoch;
  const std::size_t k = static_cast<std::size_t>(step % per_epoch);
  const auto order = epoch_order(n, config_.seed, epoch);
  const std::size_t begin = k * config_.batch_size;
  const std::size_t end = std::min(n, begin + config_.batch_size);
  return {order.begin() + static_cast<std::ptrdiff_t>(begin), order.begin() + static_cast<std::ptrdiff_t>(end)};
}

StepRecord Trainer::train_step() {
  const std::uint64_t t = optim_.step_count;
  const auto indices = batch_indices(t);
  const Batch batch = make_batch(train_, indices, load_, &train_cache_);
  for (auto& p : params_) p.value.zero_grad();

  Rng dropout_rng(mix64(config_.seed ^ kDropoutStream, t));
  ForwardContext ctx;
  ctx.training = true;
  ctx.dropout_rng = &dropout_rng;
  const Tensor logits = model_.forward(batch.images, ctx);
  const Tensor loss = weighted_log_loss(sigmoid(logits), batch.labels, weights_, config_.loss_eps);
  const double value = loss.item();
  backward(loss);
  last_grad_norm_ = global_grad_norm(params_);
  if (!std::isfinite(value) || !std::isfinite(last_grad_norm_)) {
    throw TrainingDiverged(t, config_.optimizer.lr, last_grad_norm_, value);
  }
  optim_step(optim_, params_);
  StepRecord rec;
  rec.step = optim_.step_count;
  rec.train_loss = value;
  return rec;
}

MetricsReport Trainer::evaluate_validation() {
  if (!val_) throw DataError("no validation set configured");
  return evaluate(model_, *val_, weights_, config_.loss_eps, config_.batch_size,
                  config_.accuracy_mode, &val_cache_);
}

History Trainer::run() {
  History history;
  const std::filesystem::path ckpt_dir(config_.ckpt_dir);
  auto checkpoint_name = [](std::uint64_t step) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "step_%06llu.scpf", static_cast<unsigned long long>(step));
    return std::string(buf);
  };
  while (optim_.step_count < config_.steps) {
    StepRecord rec = train_step();
    const bool last = rec.step == config_.steps;
    if (val_ && (last || (config_.eval_every > 0 && rec.step % config_.eval_every == 0))) {
      const auto m = evaluate_validation();
      rec.val_loss = m.loss;
      rec.val_accuracy = m.accuracy;
    }
    if (!config_.ckpt_dir.empty() && config_.ckpt_every > 0 && rec.step % config_.ckpt_every == 0) {
      save(ckpt_dir / checkpoint_name(rec.step));
    }
    history.records.push_back(rec);
    if (on_step) on_step(rec);
  }
  if (!config_.ckpt_dir.empty()) save(ckpt_dir / "final.scpf");
  if (!config_.history_csv.empty()) history.write_csv(config_.history_csv);
  return history;
}

Checkpoint Trainer::checkpoint() const {
  Checkpoint ckpt;
  ckpt.config_digest = config_digest(model_.config());
  for (const auto& p : model_.parameters()) {
    ckpt.arrays.push_back({"param/" + p.name, DType::F64, dims_of(p.value), p.value.to_vector()});
  }
  for (const auto& [name, buf] : optim_.first) {
    ckpt.arrays.push_back({"optim/m/" + name, DType::F64, {buf.size()}, buf});
  }
  for (const auto& [name, buf] : optim_.second) {
    ckpt.arrays.push_back({"optim/v/" + name, DType::F64, {buf.size()}, buf});
  }
  ckpt.arrays.push_back({"trainer/step", DType::F64, {2}, encode_u64(optim_.step_count)});
  ckpt.arrays.push_back({"trainer/seed", DType::F64, {2}, encode_u64(config_.seed)});
  return ckpt;
}

void Trainer::restore(const Checkpoint& ckpt, bool force) {
  const auto digest = config_digest(model_.config());
  if (ckpt.config_digest != digest && !force) {
    throw CheckpointError(CheckpointError::Kind::DigestMismatch,
                          "checkpoint was written for a different model config");
  }
  load_parameters(model_, ckpt);
  optim_.first.clear();
  optim_.second.clear();
  for (const auto& a : ckpt.arrays) {
    if (a.name.rfind("optim/m/", 0) == 0) optim_.first[a.name.substr(8)] = a.values;
    if (a.name.rfind("optim/v/", 0) == 0) optim_.second[a.name.substr(8)] = a.values;
  }
  optim_.step_count = decode_u64(ckpt.at("trainer/step").values);
  const auto seed = decode_u64(ckpt.at("trainer/seed").values);
  if (seed != config_.seed && !force) {
    throw CheckpointError(CheckpointError::Kind::DigestMismatch,
                          "checkpoint was written with seed " + std::to_string(seed) +
                              ", trainer uses " + std::to_string(config_.seed));
  }
}

void Trainer::save(const std::filesystem::path& path) const { save_checkpoint(path, checkpoint()); }

void Trainer::resume(const std::filesystem::path& path, bool force) {
  restore(load_checkpoint(path, config_digest(model_.config()), force), force);
}

}  // namespace scopeformer
