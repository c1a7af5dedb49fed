#include <gtest/gtest.h>

#include "../support/oracles.hpp"
#include "scopeformer/backbone.hpp"
#include "scopeformer/ops.hpp"

namespace scopeformer {
namespace {

BackboneConfig small_backbone(std::uint64_t seed) {
  BackboneConfig b;
  b.stages = {{4, 2, 0}, {6, 2, 1}, {6, 1, 2}};
  b.seed = seed;
  return b;
}

Tensor image(std::size_t B, std::size_t S, std::uint64_t seed) {
  Rng rng(seed);
  return Tensor::from({B, S, S, 3}, rng.uniform_vector(B * S * S * 3, 0.0, 1.0));
}

TEST(Backbone, OutputShapeFollowsCumulativeStride) {
  const Backbone net(small_backbone(1));
  EXPECT_EQ(net.config().cumulative_stride(), 4u);
  EXPECT_EQ(net.forward(image(2, 16, 3)).shape(), (Shape{2, 4, 4, 6}));
}

TEST(Backbone, FullSizeStagesReachSevenBySeven) {
  BackboneConfig b;
  b.stages = {{32, 2, 0}, {128, 2, 1}, {256, 2, 1}, {728, 2, 8}, {1024, 2, 1}};
  EXPECT_EQ(b.output_extent(224), 7u);
  EXPECT_EQ(b.feature_channels(), 1024u);
}

TEST(Backbone, ParameterCountMatchesAllocatedWeights) {
  const auto cfg = small_backbone(1);
  const Backbone net(cfg);
  ParameterList params;
  net.collect("b", params);
  EXPECT_EQ(total_elements(params), cfg.parameter_count());
}

TEST(Backbone, BlockParameterCountByHand) {
  // depthwise 3*3*4 + pointwise 4*6 + scale/shift 2*6 + projection 4*6
  EXPECT_EQ(SeparableBlock::parameter_count(4, 6, 2, 3), 36u + 24u + 12u + 24u);
  // identity shortcut: no projection
  EXPECT_EQ(SeparableBlock::parameter_count(6, 6, 1, 3), 54u + 36u + 12u);
}

TEST(Backbone, NonDivisibleInputNamesExtentAndStride) {
  const Backbone net(small_backbone(1));
  try {
    net.forward(image(1, 18, 3));
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("18"), std::string::npos) << msg;
    EXPECT_NE(msg.find("4"), std::string::npos) << msg;
  }
}

TEST(Backbone, ValidationReportsFieldPath) {
  auto cfg = small_backbone(1);
  cfg.stages[1].stride = 3;
  try {
    cfg.validate("model.backbone");
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.path(), "model.backbone.stages[1].stride");
  }
  cfg = small_backbone(1);
  cfg.stages.back().blocks = 0;
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(Backbone, SeedDeterminesWeights) {
  const auto x = image(1, 16, 5);
  const auto a = Backbone(small_backbone(7)).forward(x).to_vector();
  const auto b = Backbone(small_backbone(7)).forward(x).to_vector();
  const auto c = Backbone(small_backbone(8)).forward(x).to_vector();
  EXPECT_EQ(a, b);
  EXPECT_NE(a, c);
}

TEST(Backbone, FrozenBackboneHasNoTrainableParameters) {
  auto cfg = small_backbone(1);
  cfg.trainable = false;
  const Backbone net(cfg);
  ParameterList params;
  net.collect("b", params);
  for (const auto& p : params) EXPECT_FALSE(p.value.requires_grad()) << p.name;
}

TEST(Ensemble, ChannelSlicesRecoverEachMember) {
  EnsembleConfig cfg;
  cfg.backbones = {small_backbone(1), small_backbone(2), small_backbone(3)};
  const Ensemble ens(cfg);
  const auto x = image(2, 16, 9);
  const Tensor fused = ens.forward(x);
  ASSERT_EQ(fused.shape(), (Shape{2, 4, 4, 18}));
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(slice(fused, 3, 6 * i, 6 * (i + 1)).to_vector(), ens.forward_member(i, x).to_vector());
  }
}

TEST(Ensemble, ReductionIsPointwiseMatmul) {
  Rng rng(4);
  const Tensor fmap = Tensor::from({2, 3, 3, 5}, rng.uniform_vector(90, -1, 1));
  const Tensor w = Tensor::from({1, 1, 5, 2}, rng.uniform_vector(10, -1, 1));
  const auto want = oracle::matmul(fmap.to_vector(), w.to_vector(), 18, 5, 2);
  const Tensor got = reduce_1x1(fmap, w);
  ASSERT_EQ(got.shape(), (Shape{2, 3, 3, 2}));
  for (std::size_t i = 0; i < want.size(); ++i) EXPECT_NEAR(got.data()[i], want[i], 1e-14);
}

TEST(Ensemble, RejectsReductionWiderThanFeatures) {
  EnsembleConfig cfg;
  cfg.backbones = {small_backbone(1)};
  cfg.reduce_channels = 7;
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(Ensemble, RejectsMisalignedStrides) {
  EnsembleConfig cfg;
  auto other = small_backbone(2);
  other.stages[2].stride = 2;
  cfg.backbones = {small_backbone(1), other};
  EXPECT_THROW(cfg.validate(), ConfigError);
}

}  // namespace
}  // namespace scopeformer
