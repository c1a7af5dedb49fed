#include "scopeformer/model.hpp"

#include <sstream>

#include "scopeformer/ops.hpp"

namespace scopeformer {

const char* mode_name(ModelMode mode) {
  return mode == ModelMode::RawVit ? "raw_vit" : "n_cnn_vit";
}

ModelMode parse_mode(const std::string& name) {
  if (name == "n_cnn_vit") return ModelMode::NCnnVit;
  if (name == "raw_vit") return ModelMode::RawVit;
  throw ConfigError("model.mode", "expected \"n_cnn_vit\" or \"raw_vit\", got \"" + name + "\"");
}

void ScopeformerConfig::validate(const std::string& path) const {
  if (image_size == 0) throw ConfigError(path + ".image_size", "must be >= 1");
  if (image_channels == 0) throw ConfigError(path + ".image_channels", "must be >= 1");
  vit.validate(path + ".vit");
  if (mode == ModelMode::RawVit) {
    if (!ensemble.backbones.empty()) {
      throw ConfigError(path + ".backbone", "raw_vit mode does not take a backbone section");
    }
    if (patch_size == 0 || image_size % patch_size != 0) {
      throw ConfigError(path + ".patch_size", "image_size " + std::to_string(image_size) +
                                                  " must be divisible by patch_size");
    }
    return;
  }
  ensemble.validate(path);
  for (std::size_t i = 0; i < ensemble.backbones.size(); ++i) {
    const auto& b = ensemble.backbones[i];
    if (b.input_channels != image_channels) {
      throw ConfigError(path + ".backbone.input_channels", "must equal image_channels");
    }
    if (image_size % b.cumulative_stride() != 0) {
      throw ConfigError(path + ".image_size",
                        "image_size " + std::to_string(image_size) +
                            " is not divisible by cumulative stride " +
                            std::to_string(b.cumulative_stride()));
    }
  }
}

std::string GeometryPlan::describe() const {
  std::ostringstream os;
  os << "mode: " << mode_name(mode) << '\n';
  os << "input: " << image_size << 'x' << image_size << 'x' << image_channels << '\n';
  for (std::size_t i = 0; i < backbone_maps.size(); ++i) {
    const auto& m = backbone_maps[i];
    os << "backbone[" << i << "]: " << m.height << 'x' << m.width << 'x' << m.channels << '\n';
  }
  os << "vit_input: " << fused.height << 'x' << fused.width << 'x' << fused.channels << '\n';
  os << "tokens: " << token_count << " x " << latent_dim << '\n';
  os << "parameters.backbones: " << backbone_parameters << '\n';
  os << "parameters.reduction: " << reduction_parameters << '\n';
  os << "parameters.vit: " << vit_parameters << '\n';
  os << "parameters.total: " << total_parameters() << '\n';
  return os.str();
}

GeometryPlan plan_geometry(const ScopeformerConfig& config) {
  config.validate();
  GeometryPlan plan;
  plan.mode = config.mode;
  plan.image_size = config.image_size;
  plan.image_channels = config.image_channels;
  plan.latent_dim = config.vit.latent_dim;
  if (config.mode == ModelMode::RawVit) {
    const std::size_t grid = config.image_size / config.patch_size;
    // The raw-image ViT consumes the image itself.
    plan.fused = {config.image_size, config.image_size, config.image_channels};
    plan.token_features = config.patch_size * config.patch_size * config.image_channels;
    plan.spatial_tokens = grid * grid;
  } else {
    const auto& ens = config.ensemble;
    for (const auto& b : ens.backbones) {
      const std::size_t e = b.output_extent(config.image_size);
      const std::size_t c = ens.reduce_channels > 0 ? ens.reduce_channels : b.feature_channels();
      plan.backbone_maps.push_back({e, e, c});
      plan.backbone_parameters += b.parameter_count();
      if (ens.reduce_channels > 0) plan.reduction_parameters += b.feature_channels() * c;
    }
    const auto& first = plan.backbone_maps.front();
    plan.fused = {first.height, first.width, ens.fused_channels()};
    plan.token_features = plan.fused.channels;
    plan.spatial_tokens = first.height * first.width;
  }
  plan.token_count = plan.spatial_tokens + (config.vit.use_class_token ? 1 : 0);
  plan.vit_parameters =
      VisionTransformer::parameter_count(config.vit, plan.token_features, plan.spatial_tokens);
  return plan;
}

namespace {

const ScopeformerConfig& validated(const ScopeformerConfig& c) {
  c.validate();
  return c;
}

}  // namespace

ScopeformerModel::ScopeformerModel(ScopeformerConfig config)
    : config_(std::move(config)),
      plan_(plan_geometry(validated(config_))),
      ensemble_(config_.mode == ModelMode::NCnnVit ? std::optional<Ensemble>(config_.ensemble)
                                                   : std::nullopt),
      vit_(config_.vit, plan_.token_features, plan_.spatial_tokens, config_.vit_seed) {}

Tensor ScopeformerModel::features(const Tensor& images) const {
  if (images.rank() != 4 || images.shape()[1] != config_.image_size ||
      images.shape()[2] != config_.image_size || images.shape()[3] != config_.image_channels) {
    std::ostringstream os;
    os << "model: expected [B," << config_.image_size << ',' << config_.image_size << ','
       << config_.image_channels << "] images, got " << shape_to_string(images.shape());
    throw ShapeError(os.str());
  }
  if (ensemble_) return ensemble_->forward(images);
  return extract_patches(images, config_.patch_size);
}

Tensor ScopeformerModel::tokens(const Tensor& images) const {
  Tensor f = features(images);
  if (f.rank() == 4) {
    const auto& s = f.shape();
    f = reshape(f, {s[0], s[1] * s[2], s[3]});
  }
  return vit_.embed(f);
}

Tensor ScopeformerModel::forward(const Tensor& images, const ForwardContext& ctx) const {
  return vit_.forward(tokens(images), ctx);
}

ParameterList ScopeformerModel::parameters() const {
  ParameterList out;
  if (ensemble_) ensemble_->collect(out);
  vit_.collect(out);
  return out;
}

ParameterList ScopeformerModel::trainable_parameters() const {
  ParameterList out;
  for (auto& p : parameters()) {
    if (p.value.requires_grad()) out.push_back(p);
  }
  return out;
}

}  // namespace scopeformer
