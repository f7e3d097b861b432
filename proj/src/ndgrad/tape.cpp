#include "apricot/ndgrad/tape.hpp"

#include <stdexcept>
#include <string>

namespace apricot::ndgrad {

Var Tape::constant(Array value) {
  nodes_.push_back(Node{std::move(value), Array{}, false, {}});
  return Var(this, nodes_.size() - 1);
}

Var Tape::parameter(Array value) {
  nodes_.push_back(Node{std::move(value), Array{}, true, {}});
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Array value, std::initializer_list<Var> inputs, BackwardFn backward) {
  bool needs = false;
  for (const Var& v : inputs) {
    if (v.tape_ != this) throw std::invalid_argument("tape: input belongs to a different tape");
    needs = needs || nodes_[v.id_].requires_grad;
  }
  nodes_.push_back(Node{std::move(value), Array{}, needs, needs ? std::move(backward) : BackwardFn{}});
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Array value, const std::vector<Var>& inputs, BackwardFn backward) {
  bool needs = false;
  for (const Var& v : inputs) {
    if (v.tape_ != this) throw std::invalid_argument("tape: input belongs to a different tape");
    needs = needs || nodes_[v.id_].requires_grad;
  }
  nodes_.push_back(Node{std::move(value), Array{}, needs, needs ? std::move(backward) : BackwardFn{}});
  return Var(this, nodes_.size() - 1);
}

Array* Tape::accumulate_target(std::size_t id) {
  Node& node = nodes_[id];
  if (!node.requires_grad) return nullptr;
  if (node.grad.empty() && node.value.size() > 0) node.grad = Array(node.value.shape(), 0.0);
  return &node.grad;
}

void Tape::backward(Var loss) {
  if (loss.tape_ != this) throw std::invalid_argument("tape: loss belongs to a different tape");
  if (loss.value().size() != 1) {
    throw std::invalid_argument("tape: backward needs a scalar loss, got shape " + shape_string(loss.shape()));
  }
  Array* seed = accumulate_target(loss.id_);
  if (seed == nullptr) return;
  (*seed)[0] += 1.0;
  for (std::size_t i = loss.id_ + 1; i-- > 0;) {
    Node& node = nodes_[i];
    if (!node.backward || node.grad.empty()) continue;
    node.backward(*this, i);
  }
}

void Tape::zero_grad() {
  for (Node& node : nodes_) node.grad = Array{};
}

Array Tape::gradient(Var v) const {
  const Node& node = nodes_[v.id_];
  if (node.grad.empty()) return Array(node.value.shape(), 0.0);
  return node.grad;
}

}  // namespace apricot::ndgrad
