#include <gtest/gtest.h>

#include <cmath>

#include "../support/oracles.hpp"
#include "scopeformer/ops.hpp"
#include "scopeformer/rng.hpp"

namespace scopeformer {
namespace {

Tensor random_tensor(Shape shape, std::uint64_t seed) {
  Rng rng(seed);
  const std::size_t n = shape_numel(shape);
  return Tensor::from(std::move(shape), rng.uniform_vector(n, -1.0, 1.0));
}

void expect_near_all(std::span<const double> got, const std::vector<double>& want, double tol) {
  ASSERT_EQ(got.size(), want.size());
  for (std::size_t i = 0; i < want.size(); ++i) EXPECT_NEAR(got[i], want[i], tol) << "index " << i;
}

TEST(Ops, ElementwiseRejectsShapeMismatch) {
  EXPECT_THROW(add(Tensor::zeros({2, 3}), Tensor::zeros({3, 2})), ShapeError);
  EXPECT_THROW(broadcast_add(Tensor::zeros({2, 3}), Tensor::zeros({2})), ShapeError);
}

TEST(Ops, GeluMatchesClosedForm) {
  const Tensor y = gelu(Tensor::from({3}, {0.0, 1.0, -2.0}));
  auto ref = [](double x) {
    return 0.5 * x * (1.0 + std::tanh(std::sqrt(2.0 / M_PI) * (x + 0.044715 * x * x * x)));
  };
  EXPECT_EQ(y.data()[0], 0.0);
  EXPECT_NEAR(y.data()[1], ref(1.0), 1e-15);
  EXPECT_NEAR(y.data()[2], ref(-2.0), 1e-15);
}

TEST(Ops, MatmulMatchesTripleLoop) {
  const Tensor a = random_tensor({3, 4, 5}, 1);
  const Tensor b = random_tensor({3, 5, 2}, 2);
  const Tensor c = matmul(a, b);
  ASSERT_EQ(c.shape(), (Shape{3, 4, 2}));
  for (std::size_t i = 0; i < 3; ++i) {
    const std::vector<double> ai(a.data().begin() + i * 20, a.data().begin() + (i + 1) * 20);
    const std::vector<double> bi(b.data().begin() + i * 10, b.data().begin() + (i + 1) * 10);
    const auto want = oracle::matmul(ai, bi, 4, 5, 2);
    expect_near_all(c.data().subspan(i * 8, 8), want, 1e-14);
  }
}

TEST(Ops, MatmulRejectsInnerMismatch) {
  EXPECT_THROW(matmul(Tensor::zeros({2, 3}), Tensor::zeros({4, 2})), ShapeError);
}

struct ConvCase {
  std::size_t H, W, Ci, Co, k, stride;
  Padding padding;
};

void PrintTo(const ConvCase& c, std::ostream* os) {
  *os << c.H << 'x' << c.W << " k" << c.k << " s" << c.stride;
}

class ConvTest : public ::testing::TestWithParam<ConvCase> {};

TEST_P(ConvTest, MatchesDirectLoop) {
  const auto p = GetParam();
  const Tensor x = random_tensor({2, p.H, p.W, p.Ci}, 3);
  const Tensor w = random_tensor({p.k, p.k, p.Ci, p.Co}, 4);
  const Tensor y = conv2d(x, w, p.stride, p.padding);
  std::size_t Ho = 0, Wo = 0;
  const std::size_t pad = p.padding == Padding::Same ? p.k / 2 : 0;
  const auto want = oracle::conv2d(x.to_vector(), w.to_vector(), 2, p.H, p.W, p.Ci, p.k, p.Co, p.stride, pad, Ho, Wo);
  ASSERT_EQ(y.shape(), (Shape{2, Ho, Wo, p.Co}));
  expect_near_all(y.data(), want, 1e-13);
}

TEST_P(ConvTest, DepthwiseMatchesPerChannelLoop) {
  const auto p = GetParam();
  const Tensor x = random_tensor({2, p.H, p.W, p.Ci}, 5);
  const Tensor w = random_tensor({p.k, p.k, p.Ci}, 6);
  const Tensor y = depthwise_conv2d(x, w, p.stride, p.padding);
  std::size_t Ho = 0, Wo = 0;
  const std::size_t pad = p.padding == Padding::Same ? p.k / 2 : 0;
  const auto want = oracle::depthwise(x.to_vector(), w.to_vector(), 2, p.H, p.W, p.Ci, p.k, p.stride, pad, Ho, Wo);
  ASSERT_EQ(y.shape(), (Shape{2, Ho, Wo, p.Ci}));
  expect_near_all(y.data(), want, 1e-13);
}

INSTANTIATE_TEST_SUITE_P(Shapes, ConvTest,
                         ::testing::Values(ConvCase{5, 5, 2, 3, 3, 1, Padding::Same},
                                           ConvCase{8, 6, 3, 2, 3, 2, Padding::Same},
                                           ConvCase{7, 7, 2, 4, 1, 2, Padding::Same},
                                           ConvCase{6, 5, 2, 2, 3, 1, Padding::Valid},
                                           ConvCase{9, 9, 1, 1, 5, 2, Padding::Valid}),
                         [](const ::testing::TestParamInfo<ConvCase>& info) {
                           const auto& p = info.param;
                           return std::to_string(p.H) + "x" + std::to_string(p.W) + "_c" + std::to_string(p.Ci) +
                                  "to" + std::to_string(p.Co) + "_k" + std::to_string(p.k) + "_s" +
                                  std::to_string(p.stride) + (p.padding == Padding::Same ? "_same" : "_valid");
                         });

TEST(Ops, ConvOutputExtent) {
  EXPECT_EQ(conv_output_extent(224, 3, 2, Padding::Same), 112u);
  EXPECT_EQ(conv_output_extent(7, 3, 1, Padding::Valid), 5u);
  EXPECT_THROW(conv_output_extent(2, 5, 1, Padding::Valid), ShapeError);
}

TEST(Ops, SoftmaxMatchesReferenceAndIsStable) {
  const Tensor x = random_tensor({4, 7}, 7);
  expect_near_all(softmax(x, -1).data(), oracle::softmax_rows(x.to_vector(), 4, 7), 1e-15);

  const Tensor big = softmax(Tensor::from({1, 3}, {1000.0, 1001.0, 1002.0}), -1);
  const auto want = oracle::softmax_rows({0.0, 1.0, 2.0}, 1, 3);
  expect_near_all(big.data(), want, 1e-15);
}

TEST(Ops, LayerNormMatchesReference) {
  const Tensor x = random_tensor({3, 5}, 8);
  const Tensor g = random_tensor({5}, 9);
  const Tensor b = random_tensor({5}, 10);
  const auto want = oracle::layer_norm_rows(x.to_vector(), g.to_vector(), b.to_vector(), 3, 5, 1e-5);
  expect_near_all(layer_norm(x, g, b).data(), want, 1e-13);
}

TEST(Ops, TransposeSliceConcatMoveExpectedElements) {
  const Tensor x = Tensor::from({2, 3}, {0, 1, 2, 3, 4, 5});
  EXPECT_EQ(transpose(x, {1, 0}).to_vector(), (std::vector<double>{0, 3, 1, 4, 2, 5}));
  EXPECT_EQ(slice(x, 1, 1, 3).to_vector(), (std::vector<double>{1, 2, 4, 5}));
  const Tensor c = concat({x, slice(x, 1, 0, 1)}, 1);
  EXPECT_EQ(c.shape(), (Shape{2, 4}));
  EXPECT_EQ(c.to_vector(), (std::vector<double>{0, 1, 2, 0, 3, 4, 5, 3}));
  EXPECT_THROW(slice(x, 1, 2, 4), ShapeError);
}

TEST(Ops, ReductionsDropAxis) {
  const Tensor x = Tensor::from({2, 3}, {0, 1, 2, 3, 4, 5});
  EXPECT_EQ(sum(x, 0).to_vector(), (std::vector<double>{3, 5, 7}));
  EXPECT_EQ(mean(x, 1).to_vector(), (std::vector<double>{1, 4}));
  EXPECT_EQ(sum(Tensor::from({3}, {1, 2, 3}), 0).shape(), (Shape{1}));
  EXPECT_EQ(sum_all(x).item(), 15.0);
}

TEST(Ops, BroadcastAddsTrailingTable) {
  const Tensor x = Tensor::zeros({2, 2, 3});
  const Tensor b = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
  const Tensor y = broadcast_add(x, b);
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 6; ++j) EXPECT_EQ(y.data()[i * 6 + j], b.data()[j]);
  EXPECT_EQ(expand(b, 2).to_vector(), y.to_vector());
}

TEST(Ops, DropoutZeroesBelowPAndRescales) {
  const Tensor x = Tensor::from({4}, {1, 2, 3, 4});
  const std::vector<double> draws{0.1, 0.6, 0.49, 0.5};
  EXPECT_EQ(dropout(x, 0.5, draws).to_vector(), (std::vector<double>{0, 4, 0, 8}));
  EXPECT_EQ(dropout(x, 0.0, draws).to_vector(), x.to_vector());
  EXPECT_THROW(dropout(x, 1.0, draws), std::invalid_argument);
}

TEST(Ops, ThreadCountDoesNotChangeBits) {
  const Tensor x = random_tensor({4, 16, 16, 8}, 11);
  const Tensor w = random_tensor({3, 3, 8, 8}, 12);
  const Tensor m = random_tensor({16, 24}, 13);
  set_num_threads(1);
  const auto one = conv2d(x, w, 1, Padding::Same).to_vector();
  const auto mm1 = matmul(reshape(x, {512, 16}), m).to_vector();
  set_num_threads(4);
  const auto four = conv2d(x, w, 1, Padding::Same).to_vector();
  const auto mm4 = matmul(reshape(x, {512, 16}), m).to_vector();
  set_num_threads(1);
  EXPECT_EQ(one, four);
  EXPECT_EQ(mm1, mm4);
}

}  // namespace
}  // namespace scopeformer
