#include "drbd/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>

namespace drbd {

std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

namespace {

thread_local bool g_grad_enabled = true;
std::string g_flipped_op;

struct GateStore {
  testing_hooks::GateMode mode = testing_hooks::GateMode::off;
  std::vector<std::vector<std::uint8_t>> masks;
  std::size_t cursor = 0;
};
thread_local GateStore g_gates;

template <class T>
NodePtr<T> new_leaf(Shape shape, std::vector<T> values, bool requires_grad) {
  if (numel(shape) != values.size()) {
    throw ShapeError("tensor: shape " + to_string(shape) + " does not match " +
                     std::to_string(values.size()) + " values");
  }
  auto node = std::make_shared<Node<T>>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  node->requires_grad = requires_grad;
  return node;
}

}  // namespace

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

namespace testing_hooks {
void flip_backward_sign(std::string op) { g_flipped_op = std::move(op); }
const std::string& flipped_backward_op() { return g_flipped_op; }

void set_relu_gate_mode(GateMode mode) {
  if (mode == GateMode::record) g_gates.masks.clear();
  g_gates.cursor = 0;
  g_gates.mode = mode;
}

GateMode relu_gate_mode() { return g_gates.mode; }

void relu_gate(std::vector<std::uint8_t>& mask) {
  switch (g_gates.mode) {
    case GateMode::off: return;
    case GateMode::record: g_gates.masks.push_back(mask); return;
    case GateMode::replay:
      if (g_gates.cursor >= g_gates.masks.size() || g_gates.masks[g_gates.cursor].size() != mask.size()) {
        throw std::logic_error("relu_gate: replayed graph does not match the recorded one");
      }
      mask = g_gates.masks[g_gates.cursor++];
      return;
  }
}
}  // namespace testing_hooks

template <class T>
Tensor<T> Tensor<T>::zeros(Shape shape, bool requires_grad) {
  const auto n = drbd::numel(shape);
  return Tensor(new_leaf<T>(std::move(shape), std::vector<T>(n, T(0)), requires_grad));
}

template <class T>
Tensor<T> Tensor<T>::full(Shape shape, T fill, bool requires_grad) {
  const auto n = drbd::numel(shape);
  return Tensor(new_leaf<T>(std::move(shape), std::vector<T>(n, fill), requires_grad));
}

template <class T>
Tensor<T> Tensor<T>::from(Shape shape, std::vector<T> values, bool requires_grad) {
  return Tensor(new_leaf<T>(std::move(shape), std::move(values), requires_grad));
}

template <class T>
Tensor<T> Tensor<T>::scalar(T v, bool requires_grad) {
  return Tensor(new_leaf<T>({}, std::vector<T>{v}, requires_grad));
}

template <class T>
std::span<T> Tensor<T>::mutable_data() {
  return node_->value;
}

template <class T>
T Tensor<T>::item() const {
  if (numel() != 1) throw ShapeError("item: tensor has " + std::to_string(numel()) + " elements");
  return node_->value[0];
}

template <class T>
void Tensor<T>::set_requires_grad(bool on) {
  if (!node_->is_leaf()) throw std::logic_error("set_requires_grad: only leaves can be toggled");
  node_->requires_grad = on;
}

template <class T>
std::span<const T> Tensor<T>::grad() const {
  if (!has_grad()) throw std::logic_error("grad: no gradient has been accumulated");
  return node_->grad;
}

template <class T>
void Tensor<T>::zero_grad() {
  if (has_grad()) std::fill(node_->grad.begin(), node_->grad.end(), T(0));
}

template <class T>
Tensor<T> Tensor<T>::detach() const {
  return Tensor(new_leaf<T>(node_->shape, node_->value, false));
}

template <class T>
Tensor<T> make_result(std::string op, Shape shape, std::vector<T> value,
                      std::vector<Tensor<T>> inputs,
                      std::function<void(Node<T>&)> backward) {
  auto node = std::make_shared<Node<T>>();
  node->op = std::move(op);
  node->shape = std::move(shape);
  node->value = std::move(value);
  if (numel(node->shape) != node->value.size()) {
    throw ShapeError(node->op + ": result shape " + to_string(node->shape) + " mismatches buffer");
  }
  const bool any = std::any_of(inputs.begin(), inputs.end(),
                               [](const Tensor<T>& t) { return t.defined() && t.requires_grad(); });
  if (g_grad_enabled && any) {
    node->requires_grad = true;
    node->inputs.reserve(inputs.size());
    for (auto& t : inputs) node->inputs.push_back(t.node());
    node->backward = std::move(backward);
  }
  return Tensor<T>(std::move(node));
}

template <class T>
Tape<T>::Tape(const Tensor<T>& root) : root_(root.node().get()) {
  if (!root_->requires_grad) return;
  // Iterative post-order DFS; post-order is a valid topological order.
  std::unordered_set<const Node<T>*> seen;
  std::vector<std::pair<Node<T>*, std::size_t>> stack;
  stack.emplace_back(root_, 0);
  seen.insert(root_);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node<T>* child = node->inputs[next++].get();
      if (child && child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
      continue;
    }
    order_.push_back(node);
    stack.pop_back();
  }
}

template <class T>
void Tape<T>::backward() {
  if (order_.empty()) throw std::logic_error("backward: loss does not depend on any tensor requiring grad");
  for (Node<T>* n : order_) {
    if (!n->is_leaf()) n->grad.assign(n->value.size(), T(0));
  }
  auto root_grad = root_->grad_buffer();
  std::fill(root_grad.begin(), root_grad.end(), T(0));
  root_grad[0] += T(1);
  const std::string& flipped = g_flipped_op;
  for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
    Node<T>& n = **it;
    if (!n.backward) continue;
    if (!flipped.empty() && n.op == flipped) {
      for (auto& g : n.grad) g = -g;
      n.backward(n);
      for (auto& g : n.grad) g = -g;
    } else {
      n.backward(n);
    }
  }
}

template <class T>
void backward(const Tensor<T>& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ShapeError("backward: loss must be a scalar, got shape " +
                     (loss.defined() ? to_string(loss.shape()) : std::string("<undefined>")));
  }
  Tape<T> tape(loss);
  tape.backward();
}

template <class T>
void require_finite(std::span<const T> values, const std::string& what) {
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) {
      throw NumericalError(what + ": non-finite value at index " + std::to_string(i));
    }
  }
}

#define DRBD_INSTANTIATE(T)                                                                \
  template class Tensor<T>;                                                                \
  template class Tape<T>;                                                                  \
  template Tensor<T> make_result<T>(std::string, Shape, std::vector<T>,                    \
                                    std::vector<Tensor<T>>, std::function<void(Node<T>&)>); \
  template void backward<T>(const Tensor<T>&);                                             \
  template void require_finite<T>(std::span<const T>, const std::string&);

DRBD_INSTANTIATE(float)
DRBD_INSTANTIATE(double)

#undef DRBD_INSTANTIATE

}  // namespace drbd
