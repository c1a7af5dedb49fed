#include "scopeformer/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <sstream>
#include <unordered_set>

namespace scopeformer {

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
  OpKind kind = OpKind::Leaf;
  std::string label;
  std::uint64_t id = 0;
  std::vector<Tensor> inputs;
  BackwardFn backward;
};

}  // namespace detail

namespace {

std::atomic<std::uint64_t> g_next_id{1};
thread_local bool t_grad_enabled = true;

void validate_shape(const Shape& shape) {
  if (shape.empty()) throw ShapeError("tensor shape must have at least one axis");
  for (auto e : shape) {
    if (e == 0) throw ShapeError("tensor extent must be >= 1, got " + shape_to_string(shape));
  }
}

std::shared_ptr<detail::Node> new_node(Shape shape, std::vector<double> values) {
  validate_shape(shape);
  if (values.size() != shape_numel(shape)) {
    std::ostringstream os;
    os << "value count " << values.size() << " does not match shape " << shape_to_string(shape);
    throw ShapeError(os.str());
  }
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->data = std::move(values);
  node->id = g_next_id.fetch_add(1, std::memory_order_relaxed);
  return node;
}

}  // namespace

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

const char* op_kind_name(OpKind kind) {
  switch (kind) {
    case OpKind::Leaf: return "leaf";
    case OpKind::Add: return "add";
    case OpKind::Sub: return "sub";
    case OpKind::Mul: return "mul";
    case OpKind::Relu: return "relu";
    case OpKind::Gelu: return "gelu";
    case OpKind::Sigmoid: return "sigmoid";
    case OpKind::Scale: return "scale";
    case OpKind::Matmul: return "matmul";
    case OpKind::Conv2d: return "conv2d";
    case OpKind::DepthwiseConv2d: return "depthwise_conv2d";
    case OpKind::Softmax: return "softmax";
    case OpKind::LayerNorm: return "layer_norm";
    case OpKind::Concat: return "concat";
    case OpKind::Reshape: return "reshape";
    case OpKind::Transpose: return "transpose";
    case OpKind::Slice: return "slice";
    case OpKind::Mean: return "mean";
    case OpKind::Sum: return "sum";
    case OpKind::BroadcastAdd: return "broadcast_add";
    case OpKind::BroadcastMul: return "broadcast_mul";
    case OpKind::Expand: return "expand";
    case OpKind::Custom: return "custom";
  }
  return "unknown";
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  validate_shape(shape);
  std::vector<double> values(shape_numel(shape), value);
  return from(std::move(shape), std::move(values), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  auto node = new_node(std::move(shape), std::move(values));
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from({1}, {value}, requires_grad);
}

const Shape& Tensor::shape() const { return node_->shape; }

std::size_t Tensor::numel() const { return node_->data.size(); }

std::size_t Tensor::extent(int axis) const {
  const int r = static_cast<int>(rank());
  const int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for " + shape_to_string(shape()));
  }
  return node_->shape[static_cast<std::size_t>(a)];
}

std::span<const double> Tensor::data() const { return node_->data; }

std::vector<double> Tensor::to_vector() const { return node_->data; }

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_to_string(shape()));
  return node_->data[0];
}

double Tensor::at(std::initializer_list<std::size_t> index) const {
  if (index.size() != rank()) throw ShapeError("index rank mismatch for " + shape_to_string(shape()));
  std::size_t flat = 0;
  std::size_t axis = 0;
  for (auto i : index) {
    if (i >= node_->shape[axis]) throw ShapeError("index out of range for " + shape_to_string(shape()));
    flat = flat * node_->shape[axis] + i;
    ++axis;
  }
  return node_->data[flat];
}

std::span<double> Tensor::mutable_data() {
  if (node_->kind != OpKind::Leaf) {
    throw std::logic_error("mutable_data() is only available on leaf tensors");
  }
  return node_->data;
}

bool Tensor::requires_grad() const { return node_->requires_grad; }

bool Tensor::is_leaf() const { return node_->kind == OpKind::Leaf; }

bool Tensor::has_grad() const { return !node_->grad.empty(); }

std::span<const double> Tensor::grad() const { return node_->grad; }

std::span<double> Tensor::mutable_grad() {
  if (node_->grad.empty()) node_->grad.assign(node_->data.size(), 0.0);
  return node_->grad;
}

void Tensor::zero_grad() { node_->grad.clear(); }

void Tensor::set_requires_grad(bool flag) {
  if (!is_leaf()) throw std::logic_error("requires_grad can only be set on leaf tensors");
  node_->requires_grad = flag;
}

OpKind Tensor::op() const { return node_->kind; }

const std::string& Tensor::op_label() const { return node_->label; }

std::uint64_t Tensor::node_id() const { return node_->id; }

std::vector<Tensor> Tensor::inputs() const { return node_->inputs; }

Tensor Tensor::detach() const { return from(node_->shape, node_->data, false); }

Tensor OpBuilder::make(OpKind kind, Shape shape, std::vector<double> values,
                       std::vector<Tensor> inputs, BackwardFn backward, std::string label) {
  auto node = new_node(std::move(shape), std::move(values));
  node->kind = kind;
  node->label = label.empty() ? std::string(op_kind_name(kind)) : std::move(label);
  const bool track =
      t_grad_enabled && std::any_of(inputs.begin(), inputs.end(),
                                    [](const Tensor& t) { return t.requires_grad(); });
  if (track) {
    node->requires_grad = true;
    node->inputs = std::move(inputs);
    node->backward = std::move(backward);
  }
  return Tensor(std::move(node));
}

std::span<double> grad_buffer(const Tensor& t) {
  return const_cast<Tensor&>(t).mutable_grad();
}

std::vector<Tensor> tape_of(const Tensor& loss) {
  std::vector<Tensor> order;
  if (!loss.requires_grad()) return order;
  std::unordered_set<const detail::Node*> seen;
  std::vector<Tensor> stack{loss};
  seen.insert(loss.node_.get());
  while (!stack.empty()) {
    Tensor t = std::move(stack.back());
    stack.pop_back();
    for (const auto& in : t.node_->inputs) {
      if (in.requires_grad() && seen.insert(in.node_.get()).second) stack.push_back(in);
    }
    order.push_back(std::move(t));
  }
  // Node ids increase with creation time and inputs always exist before the
  // ops that consume them, so id order is a topological order.
  std::sort(order.begin(), order.end(),
            [](const Tensor& a, const Tensor& b) { return a.node_->id < b.node_->id; });
  return order;
}

void backward(const Tensor& loss) {
  if (!loss.defined()) throw std::invalid_argument("backward() on undefined tensor");
  if (loss.numel() != 1) {
    throw ShapeError("backward() requires a scalar loss, got " + shape_to_string(loss.shape()));
  }
  if (!loss.requires_grad()) {
    throw std::invalid_argument("backward() on a tensor that is not on the tape");
  }
  auto tape = tape_of(loss);
  // Intermediate grads are scratch space for this pass only.
  for (auto& t : tape) {
    if (!t.is_leaf()) t.node_->grad.assign(t.numel(), 0.0);
  }
  auto& seed = loss.node_->grad;
  if (seed.empty()) seed.assign(1, 0.0);
  seed[0] += 1.0;
  for (auto it = tape.rbegin(); it != tape.rend(); ++it) {
    auto& node = *it->node_;
    if (node.kind == OpKind::Leaf || !node.backward) continue;
    node.backward(node.grad, node.inputs, node.data);
  }
  for (auto& t : tape) {
    if (!t.is_leaf()) {
      t.node_->grad.clear();
      t.node_->grad.shrink_to_fit();
    }
  }
}

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }

NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

bool grad_mode_enabled() { return t_grad_enabled; }

}  // namespace scopeformer
