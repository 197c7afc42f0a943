// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "fedconv/tensor.hpp"

namespace fedconv {

class Graph;

/// Handle to a node of a Graph. Cheap to copy; valid while the graph lives.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;
  std::size_t id() const { return id_; }
  Graph& graph() const { return *graph_; }
  bool valid() const { return graph_ != nullptr; }

 private:
  friend class Graph;
  Var(Graph* graph, std::size_t id) : graph_(graph), id_(id) {}

  Graph* graph_ = nullptr;
  std::size_t id_ = 0;
};

/// Gradients of a scalar loss with respect to the trainable leaves.
/// Leaves created with requires_grad == false never appear.
class Gradients {
 public:
  bool contains(Var v) const { return by_id_.count(v.id()) != 0; }
  const Tensor& at(Var v) const;
  std::size_t size() const { return by_id_.size(); }

 private:
  friend class Graph;
  std::unordered_map<std::size_t, Tensor> by_id_;
};

/// Receives the upstream gradient of a node and accumulates into the
/// gradient buffers of its parents. A null slot means that parent does not
/// require a gradient.
using BackwardFn = std::function<void(const Tensor& grad_out, std::span<Tensor* const> parent_grads)>;

/// Append-only tape for reverse-mode differentiation.
///
/// Nodes are recorded in creation order, which is a topological order, so
/// backward() is a single reverse sweep visiting each node once.
class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var leaf(Tensor value, bool requires_grad = false);
  Var constant(Tensor value) { return leaf(std::move(value), false); }

  /// Records an op result. Used by the op implementations.
  Var record(Tensor value, std::vector<Var> parents, BackwardFn backward);

  Gradients backward(Var loss);

  const Tensor& value(std::size_t id) const { return nodes_.at(id).value; }
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    std::vector<std::size_t> parents;
    BackwardFn backward;
    bool requires_grad = false;
    bool is_leaf = true;
  };

  // deque keeps references to existing values stable across push_back.
  std::deque<Node> nodes_;
};

/// p' = p - lr * g for every entry. Every key of `params` needs a gradient
/// of the same shape.
NamedTensors sgd_step(const NamedTensors& params, const NamedTensors& grads, double lr);

}  // namespace fedconv
