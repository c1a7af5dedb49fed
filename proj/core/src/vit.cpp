#include "scopeformer/vit.hpp"

#include <cmath>
#include <sstream>

#include "scopeformer/ops.hpp"

namespace scopeformer {

namespace {

constexpr double kEmbeddingInitRange = 0.02;

Tensor small_uniform(Shape shape, Rng& rng) {
  auto values = rng.uniform_vector(shape_numel(shape), -kEmbeddingInitRange, kEmbeddingInitRange);
  return Tensor::from(std::move(shape), std::move(values), true);
}

// [..., F] x [F, O] (+ [O]) over the last axis.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor* b) {
  const std::size_t f = x.shape().back();
  Shape out_shape = x.shape();
  out_shape.back() = w.shape().back();
  Tensor y = reshape(matmul(reshape(x, {x.numel() / f, f}), w), std::move(out_shape));
  return b ? broadcast_add(y, *b) : y;
}

Tensor maybe_dropout(const Tensor& x, double p, const ForwardContext& ctx) {
  if (!ctx.training || p <= 0.0) return x;
  if (!ctx.dropout_rng) throw std::logic_error("dropout in training mode requires an RNG");
  const auto draws = ctx.dropout_rng->uniform_vector(x.numel(), 0.0, 1.0);
  return dropout(x, p, draws);
}

}  // namespace

std::size_t VitConfig::mlp_hidden() const {
  return static_cast<std::size_t>(std::llround(mlp_ratio * static_cast<double>(latent_dim)));
}

void VitConfig::validate(const std::string& path) const {
  if (depth == 0) throw ConfigError(path + ".depth", "must be >= 1");
  if (latent_dim == 0) throw ConfigError(path + ".dim", "must be >= 1");
  if (heads == 0) throw ConfigError(path + ".heads", "must be >= 1");
  if (latent_dim % heads != 0) {
    throw ConfigError(path + ".heads", "dim " + std::to_string(latent_dim) +
                                           " is not divisible by heads " + std::to_string(heads));
  }
  if (!(mlp_ratio > 0.0) || mlp_hidden() == 0) throw ConfigError(path + ".mlp_ratio", "must be > 0");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError(path + ".dropout", "must lie in [0, 1)");
  if (num_labels == 0) throw ConfigError(path + ".num_labels", "must be >= 1");
}

Tensor project_tokens(const Tensor& features, const Tensor& projection, const Tensor& positions,
                      const Tensor* class_token) {
  if (features.rank() != 3) {
    throw ShapeError("project_tokens: expected [B,N,F], got " + shape_to_string(features.shape()));
  }
  const std::size_t B = features.shape()[0];
  const std::size_t N = features.shape()[1];
  const std::size_t F = features.shape()[2];
  if (projection.rank() != 2 || projection.shape()[0] != F) {
    throw ShapeError("project_tokens: projection " + shape_to_string(projection.shape()) +
                     " does not accept features " + shape_to_string(features.shape()));
  }
  const std::size_t D = projection.shape()[1];
  const std::size_t T = N + (class_token ? 1 : 0);
  if (positions.shape() != Shape{T, D}) {
    throw ShapeError("project_tokens: positional table " + shape_to_string(positions.shape()) +
                     " does not match " + std::to_string(T) + " tokens of dim " + std::to_string(D));
  }
  Tensor tokens = linear(features, projection, nullptr);
  if (class_token) {
    if (class_token->shape() != Shape{D}) {
      throw ShapeError("project_tokens: class token must be [" + std::to_string(D) + "], got " +
                       shape_to_string(class_token->shape()));
    }
    const Tensor cls = expand(reshape(*class_token, {1, D}), B);
    tokens = concat({cls, tokens}, 1);
  }
  return broadcast_add(tokens, positions);
}

Tensor tokenize_project(const Tensor& fmap, const Tensor& projection, const Tensor& positions,
                        const Tensor* class_token) {
  if (fmap.rank() != 4) {
    throw ShapeError("tokenize_project: expected [B,h,w,C], got " + shape_to_string(fmap.shape()));
  }
  const auto& s = fmap.shape();
  return project_tokens(reshape(fmap, {s[0], s[1] * s[2], s[3]}), projection, positions,
                        class_token);
}

Tensor extract_patches(const Tensor& images, std::size_t patch) {
  if (images.rank() != 4 || patch == 0) {
    throw ShapeError("extract_patches: expected [B,H,W,C], got " + shape_to_string(images.shape()));
  }
  const auto& s = images.shape();
  const std::size_t B = s[0], H = s[1], W = s[2], C = s[3];
  if (H % patch != 0 || W % patch != 0) {
    std::ostringstream os;
    os << "extract_patches: image " << H << "x" << W << " is not divisible by patch size " << patch;
    throw ShapeError(os.str());
  }
  const std::size_t gh = H / patch;
  const std::size_t gw = W / patch;
  Tensor t = reshape(images, {B, gh, patch, gw, patch, C});
  t = transpose(t, {0, 1, 3, 2, 4, 5});
  return reshape(t, {B, gh * gw, patch * patch * C});
}

Tensor mhsa(const Tensor& x, const Tensor& wq, const Tensor& wk, const Tensor& wv,
            const Tensor& wo, std::size_t heads, AttentionProbe* probe) {
  if (x.rank() != 3) throw ShapeError("mhsa: expected [B,T,D], got " + shape_to_string(x.shape()));
  const std::size_t B = x.shape()[0];
  const std::size_t T = x.shape()[1];
  const std::size_t D = x.shape()[2];
  if (heads == 0 || D % heads != 0) {
    throw ShapeError("mhsa: dim " + std::to_string(D) + " not divisible by heads " +
                     std::to_string(heads));
  }
  for (const Tensor* w : {&wq, &wk, &wv, &wo}) {
    if (w->shape() != Shape{D, D}) {
      throw ShapeError("mhsa: projection " + shape_to_string(w->shape()) + " is not " +
                       shape_to_string({D, D}));
    }
  }
  const std::size_t dh = D / heads;
  auto split_heads = [&](const Tensor& w) {
    return reshape(linear(x, w, nullptr), {B, T, heads, dh});
  };
  const Tensor q = transpose(split_heads(wq), {0, 2, 1, 3});    // B,H,T,dh
  const Tensor k_t = transpose(split_heads(wk), {0, 2, 3, 1});  // B,H,dh,T
  const Tensor v = transpose(split_heads(wv), {0, 2, 1, 3});    // B,H,T,dh
  const Tensor scores = scale(matmul(q, k_t), 1.0 / std::sqrt(static_cast<double>(dh)));
  const Tensor attn = softmax(scores, -1);
  if (probe) probe->maps.push_back(attn);
  Tensor context = transpose(matmul(attn, v), {0, 2, 1, 3});  // B,T,H,dh
  context = reshape(context, {B, T, D});
  return linear(context, wo, nullptr);
}

MultiHeadAttention::MultiHeadAttention(std::size_t dim, std::size_t heads, Rng& rng)
    : heads_(heads) {
  if (heads == 0 || dim % heads != 0) {
    throw ConfigError("vit.heads", "dim " + std::to_string(dim) + " is not divisible by heads " +
                                       std::to_string(heads));
  }
  wq_ = fan_in_uniform({dim, dim}, dim, rng);
  wk_ = fan_in_uniform({dim, dim}, dim, rng);
  wv_ = fan_in_uniform({dim, dim}, dim, rng);
  wo_ = fan_in_uniform({dim, dim}, dim, rng);
}

Tensor MultiHeadAttention::forward(const Tensor& x, AttentionProbe* probe) const {
  return mhsa(x, wq_, wk_, wv_, wo_, heads_, probe);
}

void MultiHeadAttention::collect(const std::string& prefix, ParameterList& out) const {
  out.push_back({prefix + "/wq", wq_});
  out.push_back({prefix + "/wk", wk_});
  out.push_back({prefix + "/wv", wv_});
  out.push_back({prefix + "/wo", wo_});
}

EncoderBlock::EncoderBlock(const VitConfig& config, Rng& rng)
    : dropout_(config.dropout),
      ln1_gamma_(Tensor::full({config.latent_dim}, 1.0, true)),
      ln1_beta_(Tensor::zeros({config.latent_dim}, true)),
      attention_(config.latent_dim, config.heads, rng),
      ln2_gamma_(Tensor::full({config.latent_dim}, 1.0, true)),
      ln2_beta_(Tensor::zeros({config.latent_dim}, true)) {
  const std::size_t D = config.latent_dim;
  const std::size_t hidden = config.mlp_hidden();
  w1_ = fan_in_uniform({D, hidden}, D, rng);
  b1_ = Tensor::zeros({hidden}, true);
  w2_ = fan_in_uniform({hidden, D}, hidden, rng);
  b2_ = Tensor::zeros({D}, true);
}

Tensor EncoderBlock::forward(const Tensor& x, const ForwardContext& ctx) const {
  Tensor h = attention_.forward(layer_norm(x, ln1_gamma_, ln1_beta_), ctx.probe);
  const Tensor y = add(x, maybe_dropout(h, dropout_, ctx));
  h = gelu(linear(layer_norm(y, ln2_gamma_, ln2_beta_), w1_, &b1_));
  h = linear(h, w2_, &b2_);
  return add(y, maybe_dropout(h, dropout_, ctx));
}

void EncoderBlock::collect(const std::string& prefix, ParameterList& out) const {
  out.push_back({prefix + "/ln1/gamma", ln1_gamma_});
  out.push_back({prefix + "/ln1/beta", ln1_beta_});
  attention_.collect(prefix + "/attn", out);
  out.push_back({prefix + "/ln2/gamma", ln2_gamma_});
  out.push_back({prefix + "/ln2/beta", ln2_beta_});
  out.push_back({prefix + "/mlp/w1", w1_});
  out.push_back({prefix + "/mlp/b1", b1_});
  out.push_back({prefix + "/mlp/w2", w2_});
  out.push_back({prefix + "/mlp/b2", b2_});
}

VisionTransformer::VisionTransformer(VitConfig config, std::size_t token_features,
                                     std::size_t spatial_tokens, std::uint64_t seed)
    : config_(std::move(config)), spatial_tokens_(spatial_tokens) {
  config_.validate();
  if (token_features == 0 || spatial_tokens == 0) {
    throw ConfigError("vit", "token width and token count must be >= 1");
  }
  Rng rng(seed);
  const std::size_t D = config_.latent_dim;
  projection_ = fan_in_uniform({token_features, D}, token_features, rng);
  positions_ = small_uniform({token_count(), D}, rng);
  if (config_.use_class_token) class_token_ = small_uniform({D}, rng);
  for (std::size_t i = 0; i < config_.depth; ++i) blocks_.emplace_back(config_, rng);
  head_gamma_ = Tensor::full({D}, 1.0, true);
  head_beta_ = Tensor::zeros({D}, true);
  head_weight_ = fan_in_uniform({D, config_.num_labels}, D, rng);
  head_bias_ = Tensor::zeros({config_.num_labels}, true);
}

std::size_t VisionTransformer::token_count() const {
  return spatial_tokens_ + (config_.use_class_token ? 1 : 0);
}

std::size_t VisionTransformer::parameter_count(const VitConfig& config, std::size_t token_features,
                                               std::size_t spatial_tokens) {
  const std::size_t D = config.latent_dim;
  const std::size_t hidden = config.mlp_hidden();
  const std::size_t T = spatial_tokens + (config.use_class_token ? 1 : 0);
  std::size_t n = token_features * D + T * D + (config.use_class_token ? D : 0);
  const std::size_t per_block = 4 * D + 4 * D * D + D * hidden + hidden + hidden * D + D;
  n += config.depth * per_block;
  n += 2 * D + D * config.num_labels + config.num_labels;
  return n;
}

Tensor VisionTransformer::embed(const Tensor& features) const {
  return project_tokens(features, projection_, positions_,
                        config_.use_class_token ? &class_token_ : nullptr);
}

Tensor VisionTransformer::encode(const Tensor& tokens, const ForwardContext& ctx) const {
  Tensor h = tokens;
  for (const auto& block : blocks_) h = block.forward(h, ctx);
  return h;
}

Tensor VisionTransformer::head(const Tensor& encoded) const {
  const std::size_t B = encoded.shape()[0];
  const std::size_t D = encoded.shape()[2];
  const Tensor pooled = config_.use_class_token ? reshape(slice(encoded, 1, 0, 1), {B, D})
                                                : mean(encoded, 1);
  return linear(layer_norm(pooled, head_gamma_, head_beta_), head_weight_, &head_bias_);
}

Tensor VisionTransformer::forward(const Tensor& tokens, const ForwardContext& ctx) const {
  return head(encode(tokens, ctx));
}

void VisionTransformer::collect(ParameterList& out) const {
  out.push_back({"vit/projection", projection_});
  out.push_back({"vit/positions", positions_});
  if (config_.use_class_token) out.push_back({"vit/class_token", class_token_});
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    blocks_[i].collect("vit/layer" + std::to_string(i), out);
  }
  out.push_back({"vit/head/ln/gamma", head_gamma_});
  out.push_back({"vit/head/ln/beta", head_beta_});
  out.push_back({"vit/head/weight", head_weight_});
  out.push_back({"vit/head/bias", head_bias_});
}

}  // namespace scopeformer
