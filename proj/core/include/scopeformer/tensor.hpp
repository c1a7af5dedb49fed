#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace scopeformer {

using Shape = std::vector<std::size_t>;

std::string shape_to_string(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

/// Raised when operand extents are incompatible with an operation.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class OpKind : std::uint8_t {
  Leaf,
  Add,
  Sub,
  Mul,
  Relu,
  Gelu,
  Sigmoid,
  Scale,
  Matmul,
  Conv2d,
  DepthwiseConv2d,
  Softmax,
  LayerNorm,
  Concat,
  Reshape,
  Transpose,
  Slice,
  Mean,
  Sum,
  BroadcastAdd,
  BroadcastMul,
  Expand,
  Custom,
};

const char* op_kind_name(OpKind kind);

namespace detail {
struct Node;
}

/// Dense row-major fp64 array, optionally tracked on the autograd graph.
///
/// A Tensor is a cheap handle: copies share the same node. Values are never
/// mutated after construction except for leaves through `mutable_data()`,
/// which is how optimizers update parameters in place.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return static_cast<bool>(node_); }

  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t numel() const;
  std::size_t extent(int axis) const;

  std::span<const double> data() const;
  std::vector<double> to_vector() const;
  double item() const;
  double at(std::initializer_list<std::size_t> index) const;

  /// Writable view of a leaf's values; throws for op outputs.
  std::span<double> mutable_data();

  bool requires_grad() const;
  bool is_leaf() const;
  bool has_grad() const;
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();
  void set_requires_grad(bool flag);

  OpKind op() const;
  const std::string& op_label() const;
  std::uint64_t node_id() const;
  std::vector<Tensor> inputs() const;

  /// A fresh leaf holding a copy of the values.
  Tensor detach() const;

  bool same_node(const Tensor& other) const { return node_ == other.node_; }

 private:
  friend class OpBuilder;
  friend void backward(const Tensor& loss);
  friend std::vector<Tensor> tape_of(const Tensor& loss);

  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

  std::shared_ptr<detail::Node> node_;
};

/// Gradient routine attached to an op output. `out_grad` is the upstream
/// gradient; the routine accumulates into the grads of `inputs` that have
/// `requires_grad()`.
using BackwardFn = std::function<void(std::span<const double> out_grad,
                                      std::span<const Tensor> inputs,
                                      std::span<const double> out_value)>;

/// Builds op outputs. Other modules use it to define fused ops (e.g. losses)
/// with their own backward rule.
class OpBuilder {
 public:
  static Tensor make(OpKind kind, Shape shape, std::vector<double> values,
                     std::vector<Tensor> inputs, BackwardFn backward,
                     std::string label = {});
};

/// Accumulates d(loss)/d(leaf) into every reachable leaf that requires grad.
/// Repeated calls accumulate; callers reset with `Tensor::zero_grad`.
void backward(const Tensor& loss);

/// The linearized tape for `loss`: every grad-tracked node reachable from it,
/// in creation (topological) order.
std::vector<Tensor> tape_of(const Tensor& loss);

/// Disables graph recording on the current thread while alive.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_mode_enabled();

/// Accessor used by backward routines to accumulate into an input's grad.
std::span<double> grad_buffer(const Tensor& t);

}  // namespace scopeformer
