#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "reasoner/errors.hpp"

namespace reasoner {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
  std::uint64_t order = 0;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  // Reads this node's grad and accumulates into inputs' grads.
  std::function<void(Node&)> backward;

  bool is_leaf() const noexcept { return !backward; }

  std::vector<double>& grad_buffer() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
    return grad;
  }
};

inline std::uint64_t next_order() {
  thread_local std::uint64_t counter = 0;
  return ++counter;
}

inline bool& grad_mode_flag() {
  thread_local bool enabled = true;
  return enabled;
}

}  // namespace detail

// Disables tape recording for its lifetime (inference, EMA targets, drafts).
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_mode_flag()) { detail::grad_mode_flag() = false; }
  ~NoGradGuard() { detail::grad_mode_flag() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

inline bool grad_enabled() { return detail::grad_mode_flag(); }

// Shared handle to a dense row-major array of doubles. Copying a Tensor
// aliases the same storage; use clone() for a deep copy.
class Tensor {
 public:
  Tensor() = default;

  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false)
      : node_(std::make_shared<detail::Node>()) {
    if (shape_size(shape) != data.size()) {
      throw DimensionError("tensor data length " + std::to_string(data.size()) +
                           " does not match shape " + shape_string(shape));
    }
    node_->shape = std::move(shape);
    node_->value = std::move(data);
    node_->requires_grad = requires_grad;
    node_->order = detail::next_order();
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    std::vector<double> data(shape_size(shape), 0.0);
    return Tensor(std::move(shape), std::move(data), requires_grad);
  }

  static Tensor filled(Shape shape, double v) {
    std::vector<double> data(shape_size(shape), v);
    return Tensor(std::move(shape), std::move(data));
  }

  static Tensor scalar(double v, bool requires_grad = false) {
    return Tensor(Shape{}, {v}, requires_grad);
  }

  static Tensor matrix(const std::vector<std::vector<double>>& rows, bool requires_grad = false) {
    const std::size_t r = rows.size();
    const std::size_t c = r ? rows.front().size() : 0;
    std::vector<double> data;
    data.reserve(r * c);
    for (const auto& row : rows) {
      if (row.size() != c) throw DimensionError("ragged matrix literal");
      data.insert(data.end(), row.begin(), row.end());
    }
    return Tensor({r, c}, std::move(data), requires_grad);
  }

  static Tensor identity(std::size_t n) {
    auto t = zeros({n, n});
    for (std::size_t i = 0; i < n; ++i) t.data()[i * n + i] = 1.0;
    return t;
  }

  bool defined() const noexcept { return static_cast<bool>(node_); }

  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t size() const { return node_->value.size(); }
  std::size_t rows() const { return rank() == 2 ? node_->shape[0] : 1; }
  std::size_t cols() const {
    if (rank() == 2) return node_->shape[1];
    if (rank() == 1) return node_->shape[0];
    return 1;
  }

  std::vector<double>& data() { return node_->value; }
  const std::vector<double>& data() const { return node_->value; }
  double item() const {
    if (size() != 1) throw ContractError("item() on tensor of shape " + shape_string(shape()));
    return node_->value.front();
  }
  double at(std::size_t r, std::size_t c) const { return node_->value[r * cols() + c]; }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }

  bool has_grad() const { return node_->grad.size() == node_->value.size() && !node_->value.empty(); }
  const std::vector<double>& grad() const { return node_->grad; }
  std::vector<double>& grad_buffer() { return node_->grad_buffer(); }
  void zero_grad() { node_->grad.clear(); }

  const char* op() const { return node_->op; }
  std::uint64_t order() const { return node_->order; }

  // Deep copy detached from any tape.
  Tensor clone(bool requires_grad = false) const {
    return Tensor(node_->shape, node_->value, requires_grad);
  }

  detail::Node* node() const { return node_.get(); }
  const std::shared_ptr<detail::Node>& handle() const { return node_; }

  bool same_storage(const Tensor& other) const { return node_ == other.node_; }

  // Used by ops to create results; records the op only when some input is
  // tracked and grad mode is on.
  static Tensor from_op(Shape shape, std::vector<double> value, const char* op,
                        std::vector<Tensor> inputs, std::function<void(detail::Node&)> backward) {
    Tensor out(std::move(shape), std::move(value));
    out.node_->op = op;
    bool track = grad_enabled() &&
                 std::any_of(inputs.begin(), inputs.end(),
                             [](const Tensor& t) { return t.requires_grad(); });
    if (track) {
      out.node_->requires_grad = true;
      out.node_->inputs.reserve(inputs.size());
      for (auto& in : inputs) out.node_->inputs.push_back(in.node_);
      out.node_->backward = std::move(backward);
    }
    return out;
  }

 private:
  std::shared_ptr<detail::Node> node_;
};

// Ordered record of the recorded ops reachable from a root, in execution
// order. Reverse iteration is a valid backward schedule.
class Tape {
 public:
  explicit Tape(std::vector<detail::Node*> ops) : ops_(std::move(ops)) {}

  std::size_t size() const noexcept { return ops_.size(); }
  const std::vector<detail::Node*>& ops() const noexcept { return ops_; }

  // Every op's inputs that are themselves ops appear earlier in the record.
  bool topologically_ordered() const {
    std::unordered_set<const detail::Node*> seen;
    for (const auto* op : ops_) {
      for (const auto& in : op->inputs) {
        if (!in->is_leaf() && !seen.count(in.get())) return false;
      }
      seen.insert(op);
    }
    return true;
  }

 private:
  std::vector<detail::Node*> ops_;
};

inline Tape build_tape(const Tensor& root) {
  std::vector<detail::Node*> ops;
  std::unordered_set<detail::Node*> visited;
  std::vector<detail::Node*> stack{root.node()};
  while (!stack.empty()) {
    auto* n = stack.back();
    stack.pop_back();
    if (!n->requires_grad || n->is_leaf() || !visited.insert(n).second) continue;
    ops.push_back(n);
    for (auto& in : n->inputs) stack.push_back(in.get());
  }
  std::sort(ops.begin(), ops.end(),
            [](const detail::Node* a, const detail::Node* b) { return a->order < b->order; });
  return Tape(std::move(ops));
}

// Populates grads of every tracked tensor reachable from `loss`. Leaf grads
// accumulate across calls; intermediate grads are reset per call.
inline void backward(const Tensor& loss) {
  if (loss.size() != 1) {
    throw ContractError("backward requires a scalar loss, got shape " + shape_string(loss.shape()));
  }
  if (!loss.requires_grad()) return;
  auto* root = loss.node();
  if (root->is_leaf()) {
    root->grad_buffer()[0] += 1.0;
    return;
  }
  Tape tape = build_tape(loss);
  for (auto* op : tape.ops()) op->grad.assign(op->value.size(), 0.0);
  root->grad[0] = 1.0;
  const auto& ops = tape.ops();
  for (auto it = ops.rbegin(); it != ops.rend(); ++it) (*it)->backward(**it);
}

}  // namespace reasoner
