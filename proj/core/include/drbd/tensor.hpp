#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace drbd {

using Shape = std::vector<std::size_t>;

/// Number of elements described by `shape`. A rank-0 shape holds one element.
std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Raised when a NaN or Inf shows up where finite values are required.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

template <class T>
struct Node;

template <class T>
using NodePtr = std::shared_ptr<Node<T>>;

/// One vertex of the recorded computation graph.
///
/// Leaves have no inputs and no backward rule. Non-leaf nodes hold strong
/// references to their inputs, so a graph stays alive (and can be
/// differentiated again) for as long as its output tensor is reachable.
template <class T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  // empty until a backward pass touches this node
  bool requires_grad = false;
  std::string op = "leaf";
  std::vector<NodePtr<T>> inputs;
  std::function<void(Node&)> backward;

  bool is_leaf() const { return inputs.empty(); }

  /// Gradient buffer, zero-initialised on first use.
  std::span<T> grad_buffer() {
    if (grad.size() != value.size()) grad.assign(value.size(), T(0));
    return grad;
  }
};

/// Dense row-major tensor handle with reverse-mode differentiation.
///
/// Copies are shallow: two handles may refer to the same node. Values are
/// treated as immutable once an op has consumed them; only leaves are
/// updated in place (by optimizers, through `mutable_data`).
template <class T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(NodePtr<T> node) : node_(std::move(node)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, T fill, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<T> values, bool requires_grad = false);
  static Tensor scalar(T v, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t numel() const { return node_->value.size(); }

  std::span<const T> data() const { return node_->value; }
  /// In-place access for leaves (parameter updates, test fixtures).
  std::span<T> mutable_data();
  T item() const;
  std::vector<T> to_vector() const { return node_->value; }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on);
  bool has_grad() const { return node_->grad.size() == node_->value.size(); }
  std::span<const T> grad() const;
  void zero_grad();

  const std::string& op() const { return node_->op; }
  /// New leaf holding a copy of the values, outside any graph.
  Tensor detach() const;
  const NodePtr<T>& node() const { return node_; }

 private:
  NodePtr<T> node_;
};

/// Records a derived tensor. The backward rule is kept only when gradient
/// recording is enabled and at least one input requires a gradient.
template <class T>
Tensor<T> make_result(std::string op, Shape shape, std::vector<T> value,
                      std::vector<Tensor<T>> inputs,
                      std::function<void(Node<T>&)> backward);

/// Whether ops currently record backward rules (thread-local).
bool grad_enabled();

/// Disables graph recording for the lifetime of the guard.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Topologically ordered view of the graph that produced a tensor.
///
/// Only nodes that require a gradient are recorded. Every node appears
/// after all of its inputs, and `backward` visits each node exactly once.
template <class T>
class Tape {
 public:
  /// Holds raw node pointers; `root` must outlive the tape.
  explicit Tape(const Tensor<T>& root);

  std::size_t size() const { return order_.size(); }
  const std::vector<Node<T>*>& nodes() const { return order_; }

  /// Seeds d(root)/d(root) = 1 and propagates to every recorded node.
  /// Gradients of interior nodes are reset first; leaf gradients
  /// accumulate, so call `zero_grad` on parameters between steps.
  void backward();

 private:
  Node<T>* root_;
  std::vector<Node<T>*> order_;
};

/// Convenience wrapper: builds a tape from a scalar loss and runs it.
template <class T>
void backward(const Tensor<T>& loss);

namespace testing_hooks {
/// Negates the upstream gradient handed to every node whose op name equals
/// `op`, which is equivalent to flipping the sign of that backward rule.
/// An empty string disables the hook.
void flip_backward_sign(std::string op);
const std::string& flipped_backward_op();

/// Relu gate patterns (thread-local). In `record` mode every relu stores its
/// (x > 0) mask; in `replay` mode relus gate with the stored masks in call
/// order instead of the sign of their input. Finite differences use this to
/// stay on the linear piece that holds the base point. Switching to record
/// clears the store, switching to replay rewinds it.
enum class GateMode { off, record, replay };
void set_relu_gate_mode(GateMode mode);
GateMode relu_gate_mode();
/// Called by relu with its own mask; replay overwrites it. Throws
/// std::logic_error when the replayed graph differs from the recorded one.
void relu_gate(std::vector<std::uint8_t>& mask);
}  // namespace testing_hooks

/// Throws NumericalError if any value is NaN or infinite.
template <class T>
void require_finite(std::span<const T> values, const std::string& what);

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

}  // namespace drbd
