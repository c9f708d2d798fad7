#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

namespace evs {

using Shape = std::vector<std::int64_t>;

inline std::int64_t shape_numel(const Shape& s) {
  std::int64_t n = 1;
  for (auto e : s) n *= e;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << "]";
  return os.str();
}

struct TensorError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline void tensor_check(bool ok, const std::string& msg) {
  if (!ok) throw TensorError(msg);
}

// Scoped switch for graph recording. Evaluation paths disable recording so
// forward passes allocate no backward closures.
inline bool& grad_mode_flag() {
  thread_local bool enabled = true;
  return enabled;
}

struct NoGradGuard {
  bool prev;
  NoGradGuard() : prev(grad_mode_flag()) { grad_mode_flag() = false; }
  ~NoGradGuard() { grad_mode_flag() = prev; }
};

template <typename S>
struct Node;

template <typename S>
using NodePtr = std::shared_ptr<Node<S>>;

template <typename S>
using FlowMap = std::unordered_map<Node<S>*, std::vector<S>>;

// One value in the backward graph. Leaves (parameters, constants) have no
// parents; interior nodes carry a closure that scatters the incoming
// gradient to their parents' flow buffers.
template <typename S>
struct Node {
  Shape shape;
  std::vector<S> value;
  std::vector<S> grad;  // persistent accumulator; leaves only, lazily sized
  bool requires_grad = false;
  std::vector<NodePtr<S>> parents;
  std::function<void(const std::vector<S>&, FlowMap<S>&)> backprop;

  std::int64_t numel() const { return static_cast<std::int64_t>(value.size()); }
  bool is_leaf() const { return parents.empty() && !backprop; }
};

template <typename S>
inline std::vector<S>& flow_buf(FlowMap<S>& m, const NodePtr<S>& p) {
  auto& v = m[p.get()];
  if (v.empty()) v.assign(p->value.size(), S(0));
  return v;
}

template <typename S>
class Tensor {
 public:
  using Scalar = S;

  Tensor() = default;
  explicit Tensor(NodePtr<S> n) : n_(std::move(n)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    return filled(std::move(shape), S(0), requires_grad);
  }

  static Tensor filled(Shape shape, S v, bool requires_grad = false) {
    auto n = std::make_shared<Node<S>>();
    n->value.assign(static_cast<std::size_t>(shape_numel(shape)), v);
    n->shape = std::move(shape);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
  }

  static Tensor from_data(Shape shape, std::vector<S> data, bool requires_grad = false) {
    tensor_check(shape_numel(shape) == static_cast<std::int64_t>(data.size()),
                 "tensor data length " + std::to_string(data.size()) +
                     " does not match shape " + shape_str(shape));
    auto n = std::make_shared<Node<S>>();
    n->shape = std::move(shape);
    n->value = std::move(data);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
  }

  static Tensor scalar(S v, bool requires_grad = false) {
    return from_data({1}, {v}, requires_grad);
  }

  bool defined() const { return static_cast<bool>(n_); }
  const Shape& shape() const { return n_->shape; }
  std::int64_t numel() const { return n_->numel(); }
  std::int64_t dim(std::size_t i) const { return n_->shape[i]; }
  std::size_t rank() const { return n_->shape.size(); }

  S* data() { return n_->value.data(); }
  const S* data() const { return n_->value.data(); }
  std::vector<S>& values() { return n_->value; }
  const std::vector<S>& values() const { return n_->value; }
  S item() const {
    tensor_check(numel() == 1, "item() on non-scalar tensor");
    return n_->value[0];
  }

  bool requires_grad() const { return n_->requires_grad; }

  // Persistent gradient accumulator (populated by backward for leaves).
  std::vector<S>& grad() {
    if (n_->grad.empty()) n_->grad.assign(n_->value.size(), S(0));
    return n_->grad;
  }
  const std::vector<S>& grad_or_empty() const { return n_->grad; }
  bool has_grad() const { return !n_->grad.empty(); }
  void zero_grad() {
    if (!n_->grad.empty()) std::fill(n_->grad.begin(), n_->grad.end(), S(0));
  }

  NodePtr<S> node() const { return n_; }

  // Value copy detached from any graph.
  Tensor detached(bool requires_grad = false) const {
    auto n = std::make_shared<Node<S>>();
    n->shape = n_->shape;
    n->value = n_->value;
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
  }

 private:
  NodePtr<S> n_;
};

// Builds an op result node. `backprop` may be empty for non-differentiable
// results; it is dropped entirely when no parent needs gradients or grad
// recording is off.
template <typename S>
Tensor<S> make_op(Shape shape, std::vector<S> value, std::vector<Tensor<S>> parents,
                  std::function<void(const std::vector<S>&, FlowMap<S>&)> backprop) {
  auto n = std::make_shared<Node<S>>();
  tensor_check(shape_numel(shape) == static_cast<std::int64_t>(value.size()),
               "op result length does not match shape " + shape_str(shape));
  n->shape = std::move(shape);
  n->value = std::move(value);
  bool needs = false;
  if (grad_mode_flag()) {
    for (const auto& p : parents) needs = needs || p.requires_grad();
  }
  if (needs) {
    n->requires_grad = true;
    n->parents.reserve(parents.size());
    for (auto& p : parents) n->parents.push_back(p.node());
    n->backprop = std::move(backprop);
  }
  return Tensor<S>(std::move(n));
}

// Reverse-mode accumulation from a scalar loss into every reachable leaf's
// persistent grad. Repeated calls accumulate; shared subexpressions sum.
template <typename S>
void backward(const Tensor<S>& loss) {
  tensor_check(loss.numel() == 1, "backward requires a scalar loss");
  tensor_check(loss.requires_grad(),
               "backward on a tensor disconnected from any parameter");

  // Iterative post-order topo sort over parents.
  std::vector<Node<S>*> order;
  std::unordered_set<Node<S>*> seen;
  std::vector<std::pair<Node<S>*, std::size_t>> stack;
  stack.emplace_back(loss.node().get(), 0);
  seen.insert(loss.node().get());
  while (!stack.empty()) {
    auto [n, idx] = stack.back();
    if (idx < n->parents.size()) {
      stack.back().second++;
      Node<S>* p = n->parents[idx].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  FlowMap<S> flow;
  flow[loss.node().get()] = {S(1)};
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<S>* n = *it;
    auto f = flow.find(n);
    if (f == flow.end()) continue;
    if (n->backprop) {
      n->backprop(f->second, flow);
    } else if (n->is_leaf() && n->requires_grad) {
      if (n->grad.empty()) n->grad.assign(n->value.size(), S(0));
      for (std::size_t i = 0; i < n->grad.size(); ++i) n->grad[i] += f->second[i];
    }
    if (n != loss.node().get()) flow.erase(f);  // free as we go
  }
}

}  // namespace evs
