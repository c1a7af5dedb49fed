#include <gtest/gtest.h>

#include "scopeformer/ops.hpp"
#include "scopeformer/tensor.hpp"

namespace scopeformer {
namespace {

TEST(Tensor, FromRejectsSizeMismatch) {
  EXPECT_THROW(Tensor::from({2, 3}, {1, 2, 3}), ShapeError);
}

TEST(Tensor, AtUsesRowMajorIndexing) {
  const Tensor t = Tensor::from({2, 3}, {0, 1, 2, 3, 4, 5});
  EXPECT_EQ(t.at({1, 2}), 5.0);
  EXPECT_EQ(t.at({0, 1}), 1.0);
  EXPECT_THROW(t.at({2, 0}), ShapeError);
}

TEST(Tensor, ItemRequiresOneElement) {
  EXPECT_EQ(Tensor::scalar(3.5).item(), 3.5);
  EXPECT_THROW(Tensor::zeros({2}).item(), ShapeError);
}

TEST(Tensor, ReusedInputAccumulatesGradient) {
  Tensor x = Tensor::from({3}, {1, -2, 3}, true);
  backward(sum_all(mul(x, x)));
  const std::vector<double> expected{2, -4, 6};
  for (std::size_t i = 0; i < 3; ++i) EXPECT_DOUBLE_EQ(x.grad()[i], expected[i]);
}

TEST(Tensor, DiamondGraphVisitsEachNodeOnce) {
  // y = a + a where a = 3x; dy/dx = 6 regardless of traversal order.
  Tensor x = Tensor::from({2}, {1, 1}, true);
  const Tensor a = scale(x, 3.0);
  backward(sum_all(add(a, a)));
  EXPECT_DOUBLE_EQ(x.grad()[0], 6.0);
  EXPECT_DOUBLE_EQ(x.grad()[1], 6.0);
}

TEST(Tensor, BackwardAccumulatesAcrossCalls) {
  Tensor x = Tensor::from({1}, {2}, true);
  backward(sum_all(scale(x, 3.0)));
  backward(sum_all(scale(x, 3.0)));
  EXPECT_DOUBLE_EQ(x.grad()[0], 6.0);
  x.zero_grad();
  EXPECT_FALSE(x.has_grad());
}

TEST(Tensor, BackwardRequiresScalar) {
  Tensor x = Tensor::from({2}, {1, 2}, true);
  EXPECT_THROW(backward(scale(x, 2.0)), ShapeError);
}

TEST(Tensor, TapeIsInCreationOrder) {
  Tensor x = Tensor::from({2}, {1, 2}, true);
  const Tensor a = relu(x);
  const Tensor b = sigmoid(a);
  const Tensor loss = sum_all(b);
  const auto tape = tape_of(loss);
  ASSERT_GE(tape.size(), 3u);
  for (std::size_t i = 1; i < tape.size(); ++i) EXPECT_LT(tape[i - 1].node_id(), tape[i].node_id());
  EXPECT_TRUE(tape.back().same_node(loss));
}

TEST(Tensor, NoGradGuardStopsRecording) {
  Tensor x = Tensor::from({2}, {1, 2}, true);
  {
    NoGradGuard guard;
    EXPECT_FALSE(grad_mode_enabled());
    const Tensor y = scale(x, 2.0);
    EXPECT_FALSE(y.requires_grad());
  }
  EXPECT_TRUE(grad_mode_enabled());
  EXPECT_TRUE(scale(x, 2.0).requires_grad());
}

TEST(Tensor, OpOutputsAreReadOnly) {
  Tensor x = Tensor::from({2}, {1, 2}, true);
  Tensor y = scale(x, 2.0);
  EXPECT_THROW(y.mutable_data(), std::logic_error);
}

TEST(Tensor, DetachCopiesValuesIntoFreshLeaf) {
  Tensor x = Tensor::from({2}, {1, 2}, true);
  Tensor d = scale(x, 2.0).detach();
  EXPECT_TRUE(d.is_leaf());
  EXPECT_FALSE(d.requires_grad());
  EXPECT_EQ(d.to_vector(), (std::vector<double>{2, 4}));
}

TEST(Tensor, FrozenLeafReceivesNoGradient) {
  Tensor w = Tensor::from({2}, {1, 2}, false);
  Tensor x = Tensor::from({2}, {3, 4}, true);
  backward(sum_all(mul(w, x)));
  EXPECT_FALSE(w.has_grad());
  EXPECT_DOUBLE_EQ(x.grad()[1], 2.0);
}

}  // namespace
}  // namespace scopeformer
