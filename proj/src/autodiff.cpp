// SPDX-License-Identifier: Apache-2.0
#include "fedconv/autodiff.hpp"

#include <optional>

#include "fedconv/errors.hpp"

namespace fedconv {

const Tensor& Var::value() const {
  if (!graph_) throw UsageError("use of an unbound Var");
  return graph_->value(id_);
}

bool Var::requires_grad() const { return graph_ && graph_->requires_grad(id_); }

const Tensor& Gradients::at(Var v) const {
  auto it = by_id_.find(v.id());
  if (it == by_id_.end()) throw UsageError("no gradient recorded for node " + std::to_string(v.id()));
  return it->second;
}

Var Graph::leaf(Tensor value, bool requires_grad) {
  nodes_.push_back(Node{std::move(value), {}, {}, requires_grad, true});
  return Var(this, nodes_.size() - 1);
}

Var Graph::record(Tensor value, std::vector<Var> parents, BackwardFn backward) {
  Node node;
  node.value = std::move(value);
  node.is_leaf = false;
  for (const auto& p : parents) {
    if (&p.graph() != this) throw UsageError("op mixes nodes from different graphs");
    node.parents.push_back(p.id());
    node.requires_grad = node.requires_grad || requires_grad(p.id());
  }
  if (node.requires_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Gradients Graph::backward(Var loss) {
  if (&loss.graph() != this) throw UsageError("loss belongs to another graph");
  if (loss.value().numel() != 1) {
    throw UsageError("backward needs a scalar loss, got shape " + shape_str(loss.shape()));
  }
  Gradients out;
  std::vector<std::optional<Tensor>> grads(loss.id() + 1);
  grads[loss.id()] = Tensor(loss.shape(), 1.0);

  std::vector<Tensor*> slots;
  for (std::size_t id = loss.id() + 1; id-- > 0;) {
    Node& node = nodes_[id];
    if (!grads[id] || !node.requires_grad) continue;
    if (node.is_leaf) {
      out.by_id_.emplace(id, std::move(*grads[id]));
      grads[id].reset();
      continue;
    }
    slots.assign(node.parents.size(), nullptr);
    for (std::size_t i = 0; i < node.parents.size(); ++i) {
      const std::size_t pid = node.parents[i];
      if (!nodes_[pid].requires_grad) continue;
      if (!grads[pid]) grads[pid] = Tensor(nodes_[pid].value.shape(), 0.0);
      slots[i] = &*grads[pid];
    }
    node.backward(*grads[id], slots);
    grads[id].reset();
  }
  return out;
}

NamedTensors sgd_step(const NamedTensors& params, const NamedTensors& grads, double lr) {
  NamedTensors next;
  for (const auto& [name, p] : params) {
    auto it = grads.find(name);
    if (it == grads.end()) throw UsageError("missing gradient for trainable parameter '" + name + "'");
    if (it->second.shape() != p.shape()) {
      throw UsageError("gradient shape " + shape_str(it->second.shape()) + " does not match '" +
                       name + "' " + shape_str(p.shape()));
    }
    Tensor updated = p;
    const auto& g = it->second;
    for (std::size_t i = 0; i < updated.numel(); ++i) updated[i] -= lr * g[i];
    next.emplace(name, std::move(updated));
  }
  return next;
}

}  // namespace fedconv
