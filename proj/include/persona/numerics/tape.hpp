#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <unordered_map>
#include <utility>
#include <vector>

#include "persona/numerics/tensor.hpp"

namespace persona::numerics {

template <std::floating_point Real>
class Tape;

// Handle to one recorded value on a Tape.
template <std::floating_point Real>
struct Var {
  Tape<Real>* tape = nullptr;
  std::uint32_t id = 0;

  std::span<const Real> value() const { return tape->value(id); }
  std::size_t size() const { return value().size(); }
  Real scalar() const {
    require(size() == 1, "scalar(): value is not a scalar");
    return value()[0];
  }
};

// Computation record: an append-only list of primitive applications in
// topological order. Each node owns a rule that can recompute its value from
// its inputs (forward) or push its gradient to its inputs (backward).
template <std::floating_point Real>
class Tape {
 public:
  enum class Pass { forward, backward };
  using Rule = std::function<void(Pass, Tape&, std::uint32_t)>;

  explicit Tape(bool recording = true) : recording_(recording) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return recording_; }
  std::size_t size() const { return nodes_.size(); }

  Var<Real> constant(std::vector<Real> values) {
    Node node;
    node.value = std::move(values);
    nodes_.push_back(std::move(node));
    return last();
  }

  // Leaf bound to a parameter tensor. One node per tensor per tape, so
  // gradients from every use land in a single accumulator.
  Var<Real> param(const Tensor<Real>& tensor) {
    if (auto it = param_nodes_.find(&tensor); it != param_nodes_.end()) return {this, it->second};
    Node node;
    node.param = &tensor;
    node.requires_grad = recording_ && tensor.requires_grad;
    nodes_.push_back(std::move(node));
    param_nodes_.emplace(&tensor, static_cast<std::uint32_t>(nodes_.size() - 1));
    return last();
  }

  // Records a primitive and evaluates it immediately.
  Var<Real> emit(std::initializer_list<std::uint32_t> inputs, std::size_t out_size, Rule rule) {
    return emit(std::vector<std::uint32_t>(inputs), out_size, std::move(rule));
  }
  Var<Real> emit(std::vector<std::uint32_t> inputs, std::size_t out_size, Rule rule) {
    Node node;
    node.value.assign(out_size, Real(0));
    for (auto in : inputs) {
      require(in < nodes_.size(), "tape: input precedes its consumer");
      node.requires_grad = node.requires_grad || nodes_[in].requires_grad;
    }
    nodes_.push_back(std::move(node));
    const auto self = static_cast<std::uint32_t>(nodes_.size() - 1);
    rule(Pass::forward, *this, self);
    if (recording_) {
      nodes_[self].inputs = std::move(inputs);
      nodes_[self].rule = std::move(rule);
    }
    return {this, self};
  }

  std::span<const Real> value(std::uint32_t id) const {
    const Node& n = nodes_[id];
    if (n.param != nullptr) return n.param->values;
    return n.value;
  }
  std::span<Real> output(std::uint32_t id) { return nodes_[id].value; }
  bool requires_grad(std::uint32_t id) const { return nodes_[id].requires_grad; }

  // Gradient accumulator of a node; nullptr when the node needs no gradient.
  Real* grad(std::uint32_t id) {
    Node& n = nodes_[id];
    if (!n.requires_grad) return nullptr;
    if (n.grad.empty()) n.grad.assign(value(id).size(), Real(0));
    return n.grad.data();
  }
  std::span<const Real> grad_view(std::uint32_t id) const { return nodes_[id].grad; }

  void backward(Var<Real> loss) {
    require(loss.tape == this, "backward: loss recorded on a different tape");
    require(recording_, "backward: tape was not recording");
    require(value(loss.id).size() == 1, "backward: loss must be a scalar");
    for (auto& n : nodes_) std::fill(n.grad.begin(), n.grad.end(), Real(0));
    if (!nodes_[loss.id].requires_grad) return;
    grad(loss.id)[0] = Real(1);
    for (std::uint32_t i = loss.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.grad.empty() || !n.rule) continue;
      n.rule(Pass::backward, *this, i);
    }
  }

  // Recomputes every derived value from the leaves, in record order.
  void replay() {
    require(recording_, "replay: tape was not recording");
    for (std::uint32_t i = 0; i < nodes_.size(); ++i) {
      if (nodes_[i].rule) nodes_[i].rule(Pass::forward, *this, i);
    }
  }

  // dloss/dtensor after backward(); empty when the tensor was never used.
  std::span<const Real> gradient(const Tensor<Real>& tensor) const {
    auto it = param_nodes_.find(&tensor);
    if (it == param_nodes_.end()) return {};
    return nodes_[it->second].grad;
  }

  void accumulate_into(Tensor<Real>& tensor) const {
    auto g = gradient(tensor);
    if (g.empty()) return;
    if (tensor.grad.size() != tensor.values.size()) tensor.zero_grad();
    for (std::size_t i = 0; i < g.size(); ++i) tensor.grad[i] += g[i];
  }

  const Tensor<Real>* param_of(std::uint32_t id) const { return nodes_[id].param; }

 private:
  struct Node {
    std::vector<Real> value;
    std::vector<Real> grad;
    std::vector<std::uint32_t> inputs;
    const Tensor<Real>* param = nullptr;
    bool requires_grad = false;
    Rule rule;
  };

  Var<Real> last() { return {this, static_cast<std::uint32_t>(nodes_.size() - 1)}; }

  bool recording_;
  std::vector<Node> nodes_;
  std::unordered_map<const Tensor<Real>*, std::uint32_t> param_nodes_;
};

}  // namespace persona::numerics
