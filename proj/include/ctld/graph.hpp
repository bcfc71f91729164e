#pragma once

#include <array>
#include <functional>
#include <utility>
#include <vector>

#include "ctld/error.hpp"
#include "ctld/params.hpp"
#include "ctld/tensor.hpp"

namespace ctld {

struct NodeId {
  int idx = -1;
};

/// Reverse-mode tape over the operation set in ops.hpp. Nodes are created
/// in topological order; backward() walks the ancestors of a scalar loss
/// in reverse creation order and accumulates parameter gradients into the
/// bound ParamStore entries. Single-threaded with respect to one graph.
template <typename Scalar>
class Graph {
 public:
  using BackwardFn = std::function<void(Graph&)>;

  struct Node {
    Tensor<Scalar> value;
    Tensor<Scalar> grad;  // allocated on first use
    BackwardFn back;
    std::array<int, 3> parents{-1, -1, -1};
    ParamEntry<Scalar>* bound = nullptr;
    bool needs_grad = false;
  };

  /// Value without gradient tracking.
  NodeId constant(Tensor<Scalar> v) {
    Node n;
    n.value = std::move(v);
    return push(std::move(n));
  }

  /// Gradient-tracked input that is not backed by a ParamStore.
  NodeId leaf(Tensor<Scalar> v) {
    Node n;
    n.value = std::move(v);
    n.needs_grad = true;
    return push(std::move(n));
  }

  /// Snapshot of a store entry; backward() adds into entry.grad. Frozen
  /// entries are treated as constants, so no gradient work reaches them.
  NodeId param(ParamStore<Scalar>& store, const std::string& name) {
    auto& e = store.at(name);
    Node n;
    n.value = e.value;
    if (e.trainable) {
      n.bound = &e;
      n.needs_grad = true;
    }
    return push(std::move(n));
  }

  NodeId op(Tensor<Scalar> value, std::array<int, 3> parents) {
    Node n;
    n.value = std::move(value);
    n.parents = parents;
    for (int p : parents)
      if (p >= 0 && nodes_[static_cast<std::size_t>(p)].needs_grad) n.needs_grad = true;
    return push(std::move(n));
  }

  void set_backward(NodeId id, BackwardFn fn) { node(id).back = std::move(fn); }

  const Tensor<Scalar>& value(NodeId id) const { return node(id).value; }

  bool wants_grad(NodeId id) const { return node(id).needs_grad; }

  /// Gradient buffer, zero until backward() writes to it.
  Tensor<Scalar>& grad(NodeId id) {
    Node& n = node(id);
    if (n.grad.size() != n.value.size()) n.grad = Tensor<Scalar>(n.value.shape());
    return n.grad;
  }

  void backward(NodeId loss) {
    Node& ln = node(loss);
    if (ln.value.size() != 1) throw UsageError("backward: loss must be a scalar");
    // Mark ancestors of the loss.
    std::vector<char> active(static_cast<std::size_t>(loss.idx) + 1, 0);
    std::vector<int> stack{loss.idx};
    while (!stack.empty()) {
      const int i = stack.back();
      stack.pop_back();
      if (active[static_cast<std::size_t>(i)]) continue;
      active[static_cast<std::size_t>(i)] = 1;
      for (int p : nodes_[static_cast<std::size_t>(i)].parents)
        if (p >= 0) stack.push_back(p);
    }
    grad(loss).array().setConstant(Scalar(1));
    for (int i = loss.idx; i >= 0; --i) {
      Node& n = nodes_[static_cast<std::size_t>(i)];
      if (active[static_cast<std::size_t>(i)] && n.needs_grad && n.back) n.back(*this);
    }
    for (Node& n : nodes_)
      if (n.bound && n.grad.size() == n.value.size()) n.bound->grad.array() += n.grad.array();
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  Node& node(NodeId id) { return nodes_[static_cast<std::size_t>(id.idx)]; }
  const Node& node(NodeId id) const { return nodes_[static_cast<std::size_t>(id.idx)]; }

  NodeId push(Node n) {
    nodes_.push_back(std::move(n));
    return NodeId{static_cast<int>(nodes_.size()) - 1};
  }

  std::vector<Node> nodes_;
};

}  // namespace ctld
