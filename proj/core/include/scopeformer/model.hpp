#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "scopeformer/backbone.hpp"
#include "scopeformer/parameters.hpp"
#include "scopeformer/vit.hpp"

namespace scopeformer {

enum class ModelMode { NCnnVit, RawVit };

const char* mode_name(ModelMode mode);
ModelMode parse_mode(const std::string& name);

/// Full architecture description.
struct ScopeformerConfig {
  ModelMode mode = ModelMode::NCnnVit;
  std::size_t image_size = 224;
  std::size_t image_channels = 3;
  /// Raw-image mode only.
  std::size_t patch_size = 16;
  EnsembleConfig ensemble;
  VitConfig vit;
  std::uint64_t vit_seed = 0;

  void validate(const std::string& path = "model") const;

  bool operator==(const ScopeformerConfig&) const = default;
};

/// Shapes and parameter counts derived from a config without allocating
/// any weights.
struct GeometryPlan {
  struct Map {
    std::size_t height = 0;
    std::size_t width = 0;
    std::size_t channels = 0;
  };

  ModelMode mode = ModelMode::NCnnVit;
  std::size_t image_size = 0;
  std::size_t image_channels = 0;
  std::vector<Map> backbone_maps;  // per backbone, after reduction if any
  Map fused;                       // ViT input (feature map or patch grid)
  std::size_t token_features = 0;
  std::size_t spatial_tokens = 0;
  std::size_t token_count = 0;
  std::size_t latent_dim = 0;
  std::size_t backbone_parameters = 0;
  std::size_t reduction_parameters = 0;
  std::size_t vit_parameters = 0;

  std::size_t total_parameters() const {
    return backbone_parameters + reduction_parameters + vit_parameters;
  }
  std::string describe() const;
};

GeometryPlan plan_geometry(const ScopeformerConfig& config);

class ScopeformerModel {
 public:
  explicit ScopeformerModel(ScopeformerConfig config);

  /// images [B, H, W, C] in [0,1] -> logits [B, num_labels].
  Tensor forward(const Tensor& images, const ForwardContext& ctx = {}) const;
  /// Fused feature map (n-CNN mode) or patch tokens (raw mode).
  Tensor features(const Tensor& images) const;
  /// Embedded token sequence fed to the encoder.
  Tensor tokens(const Tensor& images) const;

  /// All parameters in a stable order with stable names.
  ParameterList parameters() const;
  /// Parameters with requires_grad set.
  ParameterList trainable_parameters() const;

  const ScopeformerConfig& config() const { return config_; }
  const GeometryPlan& plan() const { return plan_; }
  const std::optional<Ensemble>& ensemble() const { return ensemble_; }
  VisionTransformer& vit() { return vit_; }
  const VisionTransformer& vit() const { return vit_; }

 private:
  ScopeformerConfig config_;
  GeometryPlan plan_;
  std::optional<Ensemble> ensemble_;
  VisionTransformer vit_;
};

}  // namespace scopeformer
