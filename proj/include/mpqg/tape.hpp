#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <initializer_list>
#include <map>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>

#include "mpqg/errors.hpp"
#include "mpqg/tensor.hpp"

namespace mpqg {

// A trainable tensor together with its accumulated gradient.
struct Parameter {
  Tensor value;
  Tensor grad;
  bool frozen = false;
};

// Named parameter collection. Iteration order is lexicographic by name, which
// fixes the layout of checkpoints and the order of optimizer updates.
class ModelParams {
 public:
  Parameter& add(const std::string& name, Tensor init, bool frozen = false) {
    if (params_.count(name)) throw ContractError("duplicate parameter " + name);
    Tensor grad = Tensor::zeros(init.shape());
    auto [it, ok] = params_.emplace(name, Parameter{std::move(init), std::move(grad), frozen});
    return it->second;
  }

  Parameter& at(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw ContractError("unknown parameter " + name);
    return it->second;
  }
  const Parameter& at(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw ContractError("unknown parameter " + name);
    return it->second;
  }

  bool contains(const std::string& name) const { return params_.count(name) > 0; }

  void zero_grad() {
    for (auto& [_, p] : params_)
      for (double& g : p.grad.values()) g = 0.0;
  }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& [_, p] : params_) n += p.value.size();
    return n;
  }

  std::size_t size() const { return params_.size(); }
  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  friend bool operator==(const ModelParams& a, const ModelParams& b) {
    if (a.params_.size() != b.params_.size()) return false;
    for (auto ia = a.params_.begin(), ib = b.params_.begin(); ia != a.params_.end(); ++ia, ++ib) {
      if (ia->first != ib->first || !(ia->second.value == ib->second.value) ||
          ia->second.frozen != ib->second.frozen)
        return false;
    }
    return true;
  }

 private:
  std::map<std::string, Parameter> params_;
};

class Tape;

// Handle to a node on a Tape.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape() const { return tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

  inline const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t size() const { return value().size(); }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

// Records executed kernels so gradients can be propagated in exact reverse
// order. Gradients accumulate by summation; a parameter used at several
// time steps receives the sum of all contributions.
class Tape {
 public:
  using BackwardFn = std::function<void(const Tensor& out_grad, Tape& tape)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value) { return push(std::move(value), false, nullptr, nullptr); }

  // A leaf whose gradient is kept and can be read with grad() after backward().
  Var input(Tensor value) { return push(std::move(value), true, nullptr, nullptr); }

  // Leaf bound to a parameter; one node per parameter per tape. Frozen
  // parameters enter as constants, so nothing flows back into them.
  Var param(Parameter& p) {
    auto it = param_nodes_.find(&p);
    if (it != param_nodes_.end()) return Var(this, it->second);
    Var v = push(p.value, !p.frozen, nullptr, p.frozen ? nullptr : &p);
    param_nodes_.emplace(&p, v.id());
    return v;
  }

  Var record(Tensor value, std::initializer_list<Var> inputs, BackwardFn fn) {
    return record(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()), std::move(fn));
  }

  Var record(Tensor value, std::span<const Var> inputs, BackwardFn fn) {
    bool needs = false;
    for (const Var& v : inputs) {
      if (v.tape() != this) throw ContractError("kernel input belongs to a different tape");
      needs = needs || nodes_[v.id()].requires_grad;
    }
    if (!needs) fn = nullptr;
    return push(std::move(value), needs, std::move(fn), nullptr);
  }

  const Tensor& value(std::size_t id) const { return nodes_.at(id).value; }

  bool requires_grad(const Var& v) const { return nodes_[v.id()].requires_grad; }

  // Mutable gradient buffer for v, allocated on first use. Empty span for
  // nodes that do not require a gradient.
  std::span<double> grad_buffer(const Var& v) {
    Node& n = nodes_[v.id()];
    if (!n.requires_grad) return {};
    if (n.grad.empty()) n.grad = Tensor::zeros(n.value.shape());
    return n.grad.values();
  }

  // Gradient of the last backward() target w.r.t. v (zeros if unreached).
  Tensor grad(const Var& v) const {
    const Node& n = nodes_[v.id()];
    return n.grad.empty() ? Tensor::zeros(n.value.shape()) : n.grad;
  }

  std::size_t size() const { return nodes_.size(); }

  // Reverse-mode sweep from a scalar head. Parameter gradients are added
  // into Parameter::grad scaled by `scale`.
  void backward(const Var& loss, double scale = 1.0) {
    if (loss.tape() != this) throw ContractError("loss belongs to a different tape");
    if (nodes_[loss.id()].value.size() != 1)
      throw ContractError("backward requires a scalar head, got shape " +
                          shape_string(nodes_[loss.id()].value.shape()));
    if (!nodes_[loss.id()].requires_grad) return;
    for (auto& n : nodes_) n.grad = Tensor();
    grad_buffer(loss)[0] = 1.0;
    for (std::size_t id = loss.id() + 1; id-- > 0;) {
      Node& n = nodes_[id];
      if (n.grad.empty()) continue;
      if (n.backward) n.backward(n.grad, *this);
      if (n.param) {
        auto dst = n.param->grad.values();
        auto src = n.grad.values();
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += scale * src[i];
      }
    }
  }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    BackwardFn backward;
    Parameter* param = nullptr;
  };

  Var push(Tensor value, bool requires_grad, BackwardFn fn, Parameter* param) {
    nodes_.push_back(Node{std::move(value), Tensor(), requires_grad, std::move(fn), param});
    return Var(this, nodes_.size() - 1);
  }

  // deque keeps references from Var::value() stable while the tape grows.
  std::deque<Node> nodes_;
  std::unordered_map<const Parameter*, std::size_t> param_nodes_;
};

inline const Tensor& Var::value() const { return tape_->value(id_); }

}  // namespace mpqg
