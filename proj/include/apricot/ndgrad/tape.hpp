#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <vector>

#include "apricot/ndgrad/array.hpp"

namespace apricot::ndgrad {

class Tape;

// Handle to a node on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;

  Tape& tape() const { return *tape_; }
  std::size_t id() const noexcept { return id_; }
  const Array& value() const;
  const Shape& shape() const { return value().shape(); }
  bool valid() const noexcept { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

// Called during the reverse sweep with the id of the node being processed.
// Implementations read the node's upstream gradient via Tape::grad and
// accumulate into inputs via Tape::accumulate_target.
using BackwardFn = std::function<void(Tape&, std::size_t)>;

// Append-only record of array operations. Node ids are assigned in append
// order, which is also a valid topological order for the reverse sweep.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Array value);
  Var parameter(Array value);

  // Appends an op result. The backward closure is kept only if some input
  // needs a gradient.
  Var record(Array value, std::initializer_list<Var> inputs, BackwardFn backward);
  Var record(Array value, const std::vector<Var>& inputs, BackwardFn backward);

  const Array& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

  // Upstream gradient of a node during backward; empty if never reached.
  const Array& grad(std::size_t id) const { return nodes_[id].grad; }

  // Gradient buffer of an input, zero-allocated on first use. Returns nullptr
  // when the node does not need a gradient.
  Array* accumulate_target(std::size_t id);

  // Reverse sweep from a scalar node. Gradients accumulate across calls until
  // zero_grad().
  void backward(Var loss);
  void zero_grad();

  // Gradient of the last backward w.r.t. a node; zeros if unreached.
  Array gradient(Var v) const;

  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Array value;
    Array grad;
    bool requires_grad = false;
    BackwardFn backward;
  };
  std::vector<Node> nodes_;
};

inline const Array& Var::value() const { return tape_->value(id_); }

}  // namespace apricot::ndgrad
