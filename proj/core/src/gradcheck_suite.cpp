#include "scopeformer/gradcheck_suite.hpp"

#include <cmath>

#include "scopeformer/backbone.hpp"
#include "scopeformer/loss.hpp"
#include "scopeformer/ops.hpp"
#include "scopeformer/rng.hpp"
#include "scopeformer/vit.hpp"

namespace scopeformer {

namespace {

Tensor random(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  const std::size_t n = shape_numel(shape);
  return Tensor::from(std::move(shape), rng.uniform_vector(n, lo, hi), true);
}

/// Values bounded away from zero so kinks (relu) are never straddled by h.
Tensor away_from_zero(Rng& rng, Shape shape) {
  const std::size_t n = shape_numel(shape);
  std::vector<double> v(n);
  for (auto& x : v) x = (rng.bernoulli(0.5) ? 1.0 : -1.0) * rng.uniform(0.1, 1.0);
  return Tensor::from(std::move(shape), std::move(v), true);
}

/// sum(f * r) with a fixed random r, so every output element gets a distinct
/// upstream gradient.
Tensor project(const Tensor& y, std::uint64_t seed) {
  Rng rng(mix64(seed, 0x70726f6aULL));
  const Tensor r = Tensor::from(y.shape(), rng.uniform_vector(y.numel(), -1.0, 1.0));
  return sum_all(mul(y, r));
}

using Builder = std::function<GradCheckReport(std::uint64_t, double, double)>;

Builder unary(Shape shape, std::function<Tensor(const Tensor&)> op, bool avoid_zero = false) {
  return [shape, op, avoid_zero](std::uint64_t seed, double h, double tol) {
    Rng rng(seed);
    Tensor x = avoid_zero ? away_from_zero(rng, shape) : random(rng, shape);
    return grad_check([&](const Tensor& t) { return project(op(t), seed); }, x, h, tol);
  };
}

Builder binary(Shape a_shape, Shape b_shape, std::function<Tensor(const Tensor&, const Tensor&)> op) {
  return [a_shape, b_shape, op](std::uint64_t seed, double h, double tol) {
    Rng rng(seed);
    std::vector<Tensor> leaves{random(rng, a_shape), random(rng, b_shape)};
    return grad_check([&] { return project(op(leaves[0], leaves[1]), seed); }, leaves, h, tol);
  };
}

GradCheckReport check_params(const std::function<Tensor()>& f, ParameterList params, std::vector<Tensor> extra,
                             double h, double tol) {
  std::vector<Tensor> leaves = std::move(extra);
  for (auto& p : params) leaves.push_back(p.value);
  return grad_check(f, leaves, h, tol);
}

std::vector<GradCheckCase> build_cases() {
  std::vector<GradCheckCase> c;
  c.push_back({"add", binary({3, 4}, {3, 4}, add)});
  c.push_back({"sub", binary({3, 4}, {3, 4}, sub)});
  c.push_back({"mul", binary({3, 4}, {3, 4}, mul)});
  c.push_back({"relu", unary({3, 5}, relu, true)});
  c.push_back({"gelu", unary({3, 5}, gelu)});
  c.push_back({"sigmoid", unary({3, 5}, sigmoid)});
  c.push_back({"scale", unary({3, 5}, [](const Tensor& x) { return scale(x, -1.7); })});
  c.push_back({"broadcast_add", binary({2, 3, 4}, {3, 4}, broadcast_add)});
  c.push_back({"broadcast_mul", binary({2, 3, 4}, {4}, broadcast_mul)});
  c.push_back({"expand", unary({3, 2}, [](const Tensor& x) { return expand(x, 3); })});
  c.push_back({"matmul", binary({3, 4}, {4, 2}, matmul)});
  c.push_back({"matmul_batched", binary({2, 3, 4}, {2, 4, 5}, matmul)});
  c.push_back({"conv2d_same", binary({2, 5, 5, 2}, {3, 3, 2, 3},
                                     [](const Tensor& x, const Tensor& w) { return conv2d(x, w, 1, Padding::Same); })});
  c.push_back({"conv2d_stride2", binary({1, 6, 6, 2}, {3, 3, 2, 2}, [](const Tensor& x, const Tensor& w) {
                 return conv2d(x, w, 2, Padding::Same);
               })});
  c.push_back({"conv2d_valid", binary({1, 5, 4, 2}, {2, 2, 2, 3}, [](const Tensor& x, const Tensor& w) {
                 return conv2d(x, w, 1, Padding::Valid);
               })});
  c.push_back({"depthwise_conv2d", binary({2, 5, 5, 3}, {3, 3, 3}, [](const Tensor& x, const Tensor& w) {
                 return depthwise_conv2d(x, w, 1, Padding::Same);
               })});
  c.push_back({"depthwise_conv2d_stride2", binary({1, 6, 6, 2}, {3, 3, 2}, [](const Tensor& x, const Tensor& w) {
                 return depthwise_conv2d(x, w, 2, Padding::Same);
               })});
  c.push_back({"softmax", unary({3, 5}, [](const Tensor& x) { return softmax(x, -1); })});
  c.push_back({"softmax_axis0", unary({3, 5}, [](const Tensor& x) { return softmax(x, 0); })});
  c.push_back({"layer_norm", [](std::uint64_t seed, double h, double tol) {
                 Rng rng(seed);
                 std::vector<Tensor> leaves{random(rng, {2, 3, 6}), random(rng, {6}, 0.5, 1.5), random(rng, {6})};
                 return grad_check([&] { return project(layer_norm(leaves[0], leaves[1], leaves[2]), seed); },
                                   leaves, h, tol);
               }});
  c.push_back({"concat", binary({2, 3}, {2, 2}, [](const Tensor& a, const Tensor& b) { return concat({a, b}, 1); })});
  c.push_back({"reshape", unary({2, 6}, [](const Tensor& x) { return reshape(x, {3, 4}); })});
  c.push_back({"transpose", unary({2, 3, 4}, [](const Tensor& x) { return transpose(x, {2, 0, 1}); })});
  c.push_back({"slice", unary({4, 5}, [](const Tensor& x) { return slice(x, 1, 1, 4); })});
  c.push_back({"sum", unary({3, 4}, [](const Tensor& x) { return sum(x, 0); })});
  c.push_back({"mean", unary({3, 4}, [](const Tensor& x) { return mean(x, 1); })});
  c.push_back({"sum_all", unary({3, 4}, sum_all)});
  c.push_back({"mean_all", unary({3, 4}, mean_all)});
  c.push_back({"dropout", [](std::uint64_t seed, double h, double tol) {
                 Rng rng(seed);
                 Tensor x = random(rng, {4, 5});
                 const auto draws = rng.uniform_vector(20, 0.0, 1.0);
                 return grad_check([&](const Tensor& t) { return project(dropout(t, 0.3, draws), seed); }, x, h, tol);
               }});
  c.push_back({"weighted_log_loss", [](std::uint64_t seed, double h, double tol) {
                 Rng rng(seed);
                 Tensor logits = random(rng, {4, 6}, -2.0, 2.0);
                 std::vector<double> y(24);
                 for (auto& v : y) v = rng.bernoulli(0.4) ? 1.0 : 0.0;
                 const Tensor labels = Tensor::from({4, 6}, y);
                 const auto w = LabelWeights::rsna_default();
                 return grad_check([&](const Tensor& t) { return weighted_log_loss(sigmoid(t), labels, w); }, logits,
                                   h, tol);
               }});
  c.push_back({"mhsa", [](std::uint64_t seed, double h, double tol) {
                 Rng rng(seed);
                 std::vector<Tensor> leaves{random(rng, {2, 3, 4}), random(rng, {4, 4}), random(rng, {4, 4}),
                                            random(rng, {4, 4}), random(rng, {4, 4})};
                 return grad_check(
                     [&] { return project(mhsa(leaves[0], leaves[1], leaves[2], leaves[3], leaves[4], 2), seed); },
                     leaves, h, tol);
               }});
  c.push_back({"encoder_block", [](std::uint64_t seed, double h, double tol) {
                 Rng rng(seed);
                 VitConfig cfg;
                 cfg.depth = 1;
                 cfg.latent_dim = 4;
                 cfg.heads = 2;
                 cfg.mlp_ratio = 2.0;
                 Rng init(mix64(seed, 1));
                 EncoderBlock block(cfg, init);
                 Tensor x = random(rng, {2, 3, 4});
                 ParameterList params;
                 block.collect("block", params);
                 return check_params([&] { return project(block.forward(x, {}), seed); }, params, {x}, h, tol);
               }});
  c.push_back({"separable_block", [](std::uint64_t seed, double h, double tol) {
                 Rng rng(seed);
                 Rng init(mix64(seed, 1));
                 SeparableBlock block(2, 3, 2, 3, init, true);
                 Tensor x = away_from_zero(rng, {1, 4, 4, 2});
                 ParameterList params;
                 block.collect("block", params);
                 return check_params([&] { return project(block.forward(x), seed); }, params, {x}, h, tol);
               }});
  c.push_back({"model", [](std::uint64_t seed, double h, double tol) {
                 Rng rng(seed);
                 const ScopeformerModel model(tiny_model_config(seed));
                 Tensor images = random(rng, {2, 8, 8, 3}, 0.0, 1.0);
                 std::vector<double> y(12);
                 for (auto& v : y) v = rng.bernoulli(0.4) ? 1.0 : 0.0;
                 const Tensor labels = Tensor::from({2, 6}, y);
                 const auto w = LabelWeights::rsna_default();
                 return check_params([&] { return weighted_log_loss(sigmoid(model.forward(images)), labels, w); },
                                     model.parameters(), {images}, h, tol);
               }});
  return c;
}

}  // namespace

ScopeformerConfig tiny_model_config(std::uint64_t seed) {
  ScopeformerConfig cfg;
  cfg.image_size = 8;
  BackboneConfig b;
  b.stages = {{4, 2, 0}, {4, 2, 1}};
  for (std::uint64_t i = 0; i < 2; ++i) {
    b.seed = mix64(seed, 10 + i);
    cfg.ensemble.backbones.push_back(b);
  }
  cfg.vit.depth = 2;
  cfg.vit.latent_dim = 8;
  cfg.vit.heads = 2;
  cfg.vit.mlp_ratio = 2.0;
  cfg.vit_seed = mix64(seed, 20);
  return cfg;
}

const std::vector<GradCheckCase>& gradcheck_cases() {
  static const std::vector<GradCheckCase> cases = build_cases();
  return cases;
}

const GradCheckCase* find_gradcheck_case(const std::string& name) {
  for (const auto& c : gradcheck_cases()) {
    if (c.name == name) return &c;
  }
  return nullptr;
}

}  // namespace scopeformer
