#include "scopeformer/backbone.hpp"

#include <sstream>

#include "scopeformer/ops.hpp"

namespace scopeformer {

namespace {

// Distinct stream for reduction weights so enabling reduction leaves the
// backbone's own initialization untouched.
constexpr std::uint64_t kReducerStream = 0x7265647563650001ULL;

Tensor ones(std::size_t n, bool requires_grad) { return Tensor::full({n}, 1.0, requires_grad); }

Tensor affine(const Tensor& x, const Tensor& scale, const Tensor& shift) {
  return broadcast_add(broadcast_mul(x, scale), shift);
}

}  // namespace

std::size_t BackboneConfig::feature_channels() const {
  return stages.empty() ? 0 : stages.back().out_channels;
}

std::size_t BackboneConfig::cumulative_stride() const {
  std::size_t s = 1;
  for (const auto& st : stages) s *= st.stride;
  return s;
}

std::vector<std::size_t> BackboneConfig::strides() const {
  std::vector<std::size_t> out;
  for (const auto& st : stages) out.push_back(st.stride);
  return out;
}

std::size_t BackboneConfig::output_extent(std::size_t extent) const {
  const std::size_t s = cumulative_stride();
  if (extent == 0 || extent % s != 0) {
    std::ostringstream os;
    os << "backbone: spatial extent " << extent << " is not divisible by cumulative stride " << s;
    throw ShapeError(os.str());
  }
  return extent / s;
}

std::size_t BackboneConfig::parameter_count() const {
  std::size_t n = 0;
  std::size_t channels = input_channels;
  for (std::size_t i = 0; i < stages.size(); ++i) {
    const auto& st = stages[i];
    if (i == 0) {
      n += kernel_size * kernel_size * channels * st.out_channels + 2 * st.out_channels;
      channels = st.out_channels;
      for (std::size_t b = 0; b < st.blocks; ++b) {
        n += SeparableBlock::parameter_count(channels, channels, 1, kernel_size);
      }
      continue;
    }
    for (std::size_t b = 0; b < st.blocks; ++b) {
      const std::size_t stride = b == 0 ? st.stride : 1;
      n += SeparableBlock::parameter_count(channels, st.out_channels, stride, kernel_size);
      channels = st.out_channels;
    }
  }
  return n;
}

void BackboneConfig::validate(const std::string& path) const {
  if (stages.empty()) throw ConfigError(path + ".stages", "at least one stage is required");
  if (input_channels == 0) throw ConfigError(path + ".input_channels", "must be >= 1");
  if (kernel_size == 0 || kernel_size % 2 == 0) {
    throw ConfigError(path + ".kernel_size", "must be odd and >= 1");
  }
  for (std::size_t i = 0; i < stages.size(); ++i) {
    const std::string sp = path + ".stages[" + std::to_string(i) + "]";
    const auto& st = stages[i];
    if (st.out_channels == 0) throw ConfigError(sp + ".out_channels", "must be >= 1");
    if (st.stride != 1 && st.stride != 2) throw ConfigError(sp + ".stride", "must be 1 or 2");
    if (i > 0 && st.blocks == 0) throw ConfigError(sp + ".blocks", "stages after the stem need >= 1 block");
  }
  if (stages.back().blocks == 0) {
    throw ConfigError(path + ".stages[" + std::to_string(stages.size() - 1) + "].blocks",
                      "the final stage must end in a residual block");
  }
}

SeparableBlock::SeparableBlock(std::size_t in_channels, std::size_t out_channels,
                               std::size_t stride, std::size_t kernel_size, Rng& rng,
                               bool trainable)
    : stride_(stride) {
  depthwise_ = fan_in_uniform({kernel_size, kernel_size, in_channels}, kernel_size * kernel_size,
                              rng, trainable);
  pointwise_ = fan_in_uniform({1, 1, in_channels, out_channels}, in_channels, rng, trainable);
  scale_ = ones(out_channels, trainable);
  shift_ = Tensor::zeros({out_channels}, trainable);
  if (in_channels != out_channels || stride != 1) {
    projection_ = fan_in_uniform({1, 1, in_channels, out_channels}, in_channels, rng, trainable);
  }
}

std::size_t SeparableBlock::parameter_count(std::size_t in_channels, std::size_t out_channels,
                                            std::size_t stride, std::size_t kernel_size) {
  std::size_t n = kernel_size * kernel_size * in_channels + in_channels * out_channels +
                  2 * out_channels;
  if (in_channels != out_channels || stride != 1) n += in_channels * out_channels;
  return n;
}

Tensor SeparableBlock::forward(const Tensor& x) const {
  Tensor h = relu(x);
  h = depthwise_conv2d(h, depthwise_, stride_, Padding::Same);
  h = conv2d(h, pointwise_, 1, Padding::Same);
  h = affine(h, scale_, shift_);
  const Tensor residual = projection_ ? conv2d(x, *projection_, stride_, Padding::Same) : x;
  return add(residual, h);
}

void SeparableBlock::collect(const std::string& prefix, ParameterList& out) const {
  out.push_back({prefix + "/depthwise", depthwise_});
  out.push_back({prefix + "/pointwise", pointwise_});
  out.push_back({prefix + "/scale", scale_});
  out.push_back({prefix + "/shift", shift_});
  if (projection_) out.push_back({prefix + "/projection", *projection_});
}

Backbone::Backbone(BackboneConfig config) : config_(std::move(config)) {
  config_.validate();
  Rng rng(config_.seed);
  const auto k = config_.kernel_size;
  const auto& stem = config_.stages.front();
  const bool trainable = config_.trainable;
  stem_weight_ = fan_in_uniform({k, k, config_.input_channels, stem.out_channels},
                                k * k * config_.input_channels, rng, trainable);
  stem_scale_ = ones(stem.out_channels, trainable);
  stem_shift_ = Tensor::zeros({stem.out_channels}, trainable);
  std::size_t channels = stem.out_channels;
  for (std::size_t b = 0; b < stem.blocks; ++b) {
    blocks_.emplace_back(channels, channels, 1, k, rng, trainable);
  }
  for (std::size_t i = 1; i < config_.stages.size(); ++i) {
    const auto& st = config_.stages[i];
    for (std::size_t b = 0; b < st.blocks; ++b) {
      blocks_.emplace_back(channels, st.out_channels, b == 0 ? st.stride : 1, k, rng, trainable);
      channels = st.out_channels;
    }
  }
}

Tensor Backbone::forward(const Tensor& x) const {
  if (x.rank() != 4 || x.shape()[3] != config_.input_channels) {
    throw ShapeError("backbone: expected [B,H,W," + std::to_string(config_.input_channels) +
                     "] input, got " + shape_to_string(x.shape()));
  }
  config_.output_extent(x.shape()[1]);
  config_.output_extent(x.shape()[2]);
  Tensor h = conv2d(x, stem_weight_, config_.stages.front().stride, Padding::Same);
  h = relu(affine(h, stem_scale_, stem_shift_));
  for (const auto& block : blocks_) h = block.forward(h);
  return h;
}

void Backbone::collect(const std::string& prefix, ParameterList& out) const {
  out.push_back({prefix + "/stem/weight", stem_weight_});
  out.push_back({prefix + "/stem/scale", stem_scale_});
  out.push_back({prefix + "/stem/shift", stem_shift_});
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    blocks_[i].collect(prefix + "/block" + std::to_string(i), out);
  }
}

std::size_t EnsembleConfig::fused_channels() const {
  if (reduce_channels > 0) return reduce_channels * backbones.size();
  std::size_t c = 0;
  for (const auto& b : backbones) c += b.feature_channels();
  return c;
}

void EnsembleConfig::validate(const std::string& path) const {
  if (backbones.empty()) throw ConfigError(path + ".n_backbones", "must be >= 1");
  for (std::size_t i = 0; i < backbones.size(); ++i) {
    backbones[i].validate(path + ".backbones[" + std::to_string(i) + "]");
  }
  const auto reference = backbones.front().strides();
  for (std::size_t i = 1; i < backbones.size(); ++i) {
    if (backbones[i].strides() != reference) {
      throw ConfigError(path + ".backbones[" + std::to_string(i) + "].stages",
                        "stage strides differ from backbone 0; fused feature maps would not align");
    }
    if (backbones[i].input_channels != backbones.front().input_channels) {
      throw ConfigError(path + ".backbones[" + std::to_string(i) + "].input_channels",
                        "all backbones must read the same image");
    }
  }
  for (std::size_t i = 0; i < backbones.size(); ++i) {
    if (reduce_channels > backbones[i].feature_channels()) {
      throw ConfigError(path + ".reduce_channels",
                        "exceeds the feature width of backbone " + std::to_string(i));
    }
  }
}

Tensor reduce_1x1(const Tensor& fmap, const Tensor& weight) {
  if (weight.rank() != 4 || weight.shape()[0] != 1 || weight.shape()[1] != 1) {
    throw ShapeError("reduce_1x1: weight must be [1,1,C,Cr], got " + shape_to_string(weight.shape()));
  }
  return conv2d(fmap, weight, 1, Padding::Valid);
}

Ensemble::Ensemble(EnsembleConfig config) : config_(std::move(config)) {
  config_.validate();
  for (const auto& bc : config_.backbones) {
    members_.emplace_back(bc);
    if (config_.reduce_channels > 0) {
      Rng rng(mix64(bc.seed, kReducerStream));
      const auto c = bc.feature_channels();
      reducers_.push_back(fan_in_uniform({1, 1, c, config_.reduce_channels}, c, rng, true));
    }
  }
}

Tensor Ensemble::forward_member(std::size_t i, const Tensor& x) const {
  Tensor f = members_.at(i).forward(x);
  if (!reducers_.empty()) f = reduce_1x1(f, reducers_[i]);
  return f;
}

Tensor Ensemble::forward(const Tensor& x) const {
  std::vector<Tensor> maps;
  maps.reserve(members_.size());
  for (std::size_t i = 0; i < members_.size(); ++i) maps.push_back(forward_member(i, x));
  return concat(maps, 3);
}

void Ensemble::collect(ParameterList& out) const {
  for (std::size_t i = 0; i < members_.size(); ++i) {
    const std::string prefix = "backbone" + std::to_string(i);
    members_[i].collect(prefix, out);
    if (!reducers_.empty()) out.push_back({prefix + "/reduce", reducers_[i]});
  }
}

}  // namespace scopeformer
