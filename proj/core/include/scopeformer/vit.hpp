#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "scopeformer/parameters.hpp"
#include "scopeformer/rng.hpp"
#include "scopeformer/tensor.hpp"

namespace scopeformer {

struct VitConfig {
  std::size_t depth = 12;
  std::size_t latent_dim = 1456;
  std::size_t heads = 8;
  double mlp_ratio = 4.0;
  double dropout = 0.0;
  std::size_t num_labels = 6;
  bool use_class_token = true;

  std::size_t mlp_hidden() const;
  void validate(const std::string& path = "vit") const;

  bool operator==(const VitConfig&) const = default;
};

/// Collects per-layer attention probabilities [B, heads, T, T] when attached.
struct AttentionProbe {
  std::vector<Tensor> maps;
};

struct ForwardContext {
  bool training = false;
  Rng* dropout_rng = nullptr;
  AttentionProbe* probe = nullptr;
};

/// tokens [B, N, F] -> [B, N(+1), D]: projection, optional class token at
/// index 0, then positional table [T, D].
Tensor project_tokens(const Tensor& features, const Tensor& projection, const Tensor& positions,
                      const Tensor* class_token);

/// Feature-map tokenization: each spatial position of [B, h, w, C] is one
/// token, in row-major (i, j) order.
Tensor tokenize_project(const Tensor& fmap, const Tensor& projection, const Tensor& positions,
                        const Tensor* class_token);

/// Non-overlapping P x P patches of [B, H, W, C] flattened in (row, col,
/// channel) order -> [B, (H/P)(W/P), P*P*C].
Tensor extract_patches(const Tensor& images, std::size_t patch);

/// Multi-head self-attention without biases, scaled by 1/sqrt(D/heads).
/// [B, T, D] -> [B, T, D].
Tensor mhsa(const Tensor& x, const Tensor& wq, const Tensor& wk, const Tensor& wv,
            const Tensor& wo, std::size_t heads, AttentionProbe* probe = nullptr);

class MultiHeadAttention {
 public:
  /// Throws ConfigError when dim is not divisible by heads.
  MultiHeadAttention(std::size_t dim, std::size_t heads, Rng& rng);

  Tensor forward(const Tensor& x, AttentionProbe* probe = nullptr) const;
  void collect(const std::string& prefix, ParameterList& out) const;

  std::size_t heads() const { return heads_; }
  Tensor& wq() { return wq_; }
  Tensor& wk() { return wk_; }
  Tensor& wv() { return wv_; }
  Tensor& wo() { return wo_; }

 private:
  std::size_t heads_;
  Tensor wq_, wk_, wv_, wo_;
};

/// Pre-norm transformer block: x + MHSA(LN(x)), then + MLP(LN(.)) with GELU.
class EncoderBlock {
 public:
  EncoderBlock(const VitConfig& config, Rng& rng);

  Tensor forward(const Tensor& x, const ForwardContext& ctx) const;
  void collect(const std::string& prefix, ParameterList& out) const;

  MultiHeadAttention& attention() { return attention_; }
  Tensor& mlp_out_weight() { return w2_; }
  Tensor& mlp_out_bias() { return b2_; }

 private:
  double dropout_;
  Tensor ln1_gamma_, ln1_beta_;
  MultiHeadAttention attention_;
  Tensor ln2_gamma_, ln2_beta_;
  Tensor w1_, b1_, w2_, b2_;
};

/// Maps backbone features (or patches) to label logits.
class VisionTransformer {
 public:
  /// `token_features`: width F of incoming tokens; `spatial_tokens`: N.
  VisionTransformer(VitConfig config, std::size_t token_features, std::size_t spatial_tokens,
                    std::uint64_t seed);

  /// [B, N, F] -> [B, T, D]
  Tensor embed(const Tensor& features) const;
  /// Encoder stack only.
  Tensor encode(const Tensor& tokens, const ForwardContext& ctx = {}) const;
  /// Final layer norm on the class token (or token mean), then linear to logits.
  Tensor head(const Tensor& encoded) const;
  /// Already-embedded tokens -> logits [B, num_labels].
  Tensor forward(const Tensor& tokens, const ForwardContext& ctx = {}) const;

  void collect(ParameterList& out) const;

  const VitConfig& config() const { return config_; }
  std::size_t token_count() const;
  std::vector<EncoderBlock>& blocks() { return blocks_; }
  Tensor& positions() { return positions_; }

  static std::size_t parameter_count(const VitConfig& config, std::size_t token_features,
                                     std::size_t spatial_tokens);

 private:
  VitConfig config_;
  std::size_t spatial_tokens_;
  Tensor projection_;
  Tensor positions_;
  Tensor class_token_;
  std::vector<EncoderBlock> blocks_;
  Tensor head_gamma_, head_beta_;
  Tensor head_weight_, head_bias_;
};

}  // namespace scopeformer
