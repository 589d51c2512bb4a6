#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "hfan/tensor.hpp"

namespace hfan {

/// Trainable tensor. `name` is the stable handle used by the optimizer and checkpoints.
template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;

  Parameter() = default;
  Parameter(std::string n, Tensor<T> v)
      : name(std::move(n)), value(std::move(v)), grad(Tensor<T>::zeros(value.shape())) {}

  void zero_grad() { grad.fill(T(0)); }
};

template <typename T>
class Tape;

/// Handle to a value recorded on a tape.
template <typename T>
class Var {
 public:
  Var() = default;
  Var(Tape<T>* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape<T>& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  const Tensor<T>& value() const;
  const Shape& shape() const { return value().shape(); }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape<T>* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Reverse-mode differentiation record. Single owner; not shareable across threads.
///
/// Ops append nodes through `record`. `backward` walks the nodes in exact reverse
/// order, calls each node's rule, then adds leaf gradients into their Parameters
/// and clears the tape.
template <typename T>
class Tape {
 public:
  /// Rule receiving the tape and the gradient flowing into the node's output.
  using BackwardFn = std::function<void(Tape&, const Tensor<T>& out_grad)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<T> constant(Tensor<T> value) { return push("constant", std::move(value), {}, nullptr, false, nullptr); }

  Var<T> parameter(Parameter<T>& p) {
    if (!grad_enabled_) return push("parameter", p.value, {}, nullptr, false, nullptr);
    return push("parameter", p.value, {}, nullptr, true, &p);
  }

  /// Appends the result of a primitive. `inputs` are ids of earlier nodes.
  Var<T> record(std::string_view op, Tensor<T> value, std::vector<std::size_t> inputs, BackwardFn fn) {
    bool needs = false;
    for (std::size_t id : inputs) needs = needs || nodes_.at(id).requires_grad;
    return push(op, std::move(value), std::move(inputs), needs ? std::move(fn) : nullptr, needs, nullptr);
  }

  const Tensor<T>& value(std::size_t id) const { return nodes_.at(id).value; }
  const std::string& op_name(std::size_t id) const { return nodes_.at(id).op; }
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }

  /// Gradient slot of a node; allocated zero-filled on first touch.
  Tensor<T>& grad(std::size_t id) {
    Node& n = nodes_.at(id);
    if (n.grad.empty()) n.grad = Tensor<T>::zeros(n.value.shape());
    return n.grad;
  }

  /// Adds `g` into the gradient slot of `id` if that node needs a gradient.
  void accumulate(std::size_t id, const Tensor<T>& g) {
    if (!requires_grad(id)) return;
    Tensor<T>& dst = grad(id);
    if (dst.shape() != g.shape()) {
      throw DimensionError("gradient shape " + shape_str(g.shape()) + " does not match node " +
                           op_name(id) + " " + shape_str(dst.shape()));
    }
    T* d = dst.raw();
    const T* s = g.raw();
    for (std::size_t i = 0; i < dst.numel(); ++i) d[i] += s[i];
  }

  /// Runs the backward pass from a scalar `loss` and clears the tape.
  /// Each visited op id is appended to `visit_log` when given.
  void backward(const Var<T>& loss, std::vector<std::size_t>* visit_log = nullptr);

  std::size_t size() const noexcept { return nodes_.size(); }
  void clear() { nodes_.clear(); }

  /// When set, `record` throws NumericalError naming the first op producing a non-finite value.
  void set_check_finite(bool on) { check_finite_ = on; }

  /// With gradients disabled, parameters enter as constants and no rules are stored.
  void set_grad_enabled(bool on) { grad_enabled_ = on; }
  bool grad_enabled() const noexcept { return grad_enabled_; }

 private:
  struct Node {
    std::string op;
    Tensor<T> value;
    Tensor<T> grad;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    bool requires_grad = false;
    Parameter<T>* param = nullptr;
  };

  Var<T> push(std::string_view op, Tensor<T> value, std::vector<std::size_t> inputs, BackwardFn fn,
              bool requires_grad, Parameter<T>* param);

  std::deque<Node> nodes_;  // deque keeps references stable across record()
  bool check_finite_ = false;
  bool grad_enabled_ = true;
};

template <typename T>
const Tensor<T>& Var<T>::value() const {
  return tape_->value(id_);
}

}  // namespace hfan
