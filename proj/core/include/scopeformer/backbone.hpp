#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "scopeformer/parameters.hpp"
#include "scopeformer/tensor.hpp"

namespace scopeformer {

struct StageSpec {
  std::size_t out_channels = 0;
  std::size_t stride = 1;
  std::size_t blocks = 1;

  bool operator==(const StageSpec&) const = default;
};

/// "Xception-lite" feature extractor.
///
/// Stage 0 is the entry stem: a regular k x k convolution carrying the stage
/// stride, followed by `blocks` stride-1 separable blocks. Every later stage
/// is a run of separable residual blocks whose first block carries the stage
/// stride. The last stage must contain at least one block so the feature tap
/// is a residual Add.
struct BackboneConfig {
  std::vector<StageSpec> stages;
  std::size_t input_channels = 3;
  std::size_t kernel_size = 3;
  std::uint64_t seed = 0;
  std::string pretraining_tag;
  bool trainable = true;

  std::size_t feature_channels() const;
  std::size_t cumulative_stride() const;
  std::vector<std::size_t> strides() const;
  /// Spatial extent of the feature map for an input extent; throws ShapeError
  /// when `extent` is not divisible by the cumulative stride.
  std::size_t output_extent(std::size_t extent) const;
  std::size_t parameter_count() const;
  /// Throws ConfigError with paths relative to `path`.
  void validate(const std::string& path = "backbone") const;

  bool operator==(const BackboneConfig&) const = default;
};

/// relu -> depthwise k x k (stride) -> pointwise 1x1 -> per-channel scale/shift,
/// summed with the identity or a strided 1x1 projection of the input.
class SeparableBlock {
 public:
  SeparableBlock(std::size_t in_channels, std::size_t out_channels, std::size_t stride,
                 std::size_t kernel_size, Rng& rng, bool trainable);

  Tensor forward(const Tensor& x) const;
  void collect(const std::string& prefix, ParameterList& out) const;

  static std::size_t parameter_count(std::size_t in_channels, std::size_t out_channels,
                                     std::size_t stride, std::size_t kernel_size);

  std::size_t stride() const { return stride_; }
  bool has_projection() const { return projection_.has_value(); }

 private:
  std::size_t stride_;
  Tensor depthwise_;
  Tensor pointwise_;
  Tensor scale_;
  Tensor shift_;
  std::optional<Tensor> projection_;
};

class Backbone {
 public:
  explicit Backbone(BackboneConfig config);

  /// [B, H, W, input_channels] -> [B, H/s, W/s, feature_channels].
  Tensor forward(const Tensor& x) const;

  void collect(const std::string& prefix, ParameterList& out) const;
  const BackboneConfig& config() const { return config_; }
  const std::vector<SeparableBlock>& blocks() const { return blocks_; }

 private:
  BackboneConfig config_;
  Tensor stem_weight_;
  Tensor stem_scale_;
  Tensor stem_shift_;
  std::vector<SeparableBlock> blocks_;
};

struct EnsembleConfig {
  std::vector<BackboneConfig> backbones;
  /// Per-backbone 1x1 reduction width applied before concatenation; 0 disables.
  std::size_t reduce_channels = 0;

  std::size_t fused_channels() const;
  void validate(const std::string& path = "ensemble") const;

  bool operator==(const EnsembleConfig&) const = default;
};

/// 1x1 convolution [B,h,w,C] x [1,1,C,Cr] -> [B,h,w,Cr].
Tensor reduce_1x1(const Tensor& fmap, const Tensor& weight);

/// n backbones fed the same image; feature maps (optionally reduced) are
/// concatenated along channels in backbone order.
class Ensemble {
 public:
  explicit Ensemble(EnsembleConfig config);

  Tensor forward(const Tensor& x) const;
  /// Backbone i alone, including its reduction when configured.
  Tensor forward_member(std::size_t i, const Tensor& x) const;

  void collect(ParameterList& out) const;
  std::size_t size() const { return members_.size(); }
  const Backbone& member(std::size_t i) const { return members_.at(i); }
  const EnsembleConfig& config() const { return config_; }

 private:
  EnsembleConfig config_;
  std::vector<Backbone> members_;
  std::vector<Tensor> reducers_;
};

}  // namespace scopeformer
