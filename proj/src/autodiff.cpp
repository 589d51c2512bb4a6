#include "hfan/autodiff.hpp"

namespace hfan {

template <typename T>
Var<T> Tape<T>::push(std::string_view op, Tensor<T> value, std::vector<std::size_t> inputs,
                     BackwardFn fn, bool requires_grad, Parameter<T>* param) {
  if (check_finite_ && !value.all_finite()) {
    throw NumericalError("non-finite value produced by op '" + std::string(op) + "' (node " +
                         std::to_string(nodes_.size()) + ")");
  }
  Node n;
  n.op = std::string(op);
  n.value = std::move(value);
  n.inputs = std::move(inputs);
  n.backward = std::move(fn);
  n.requires_grad = requires_grad;
  n.param = param;
  nodes_.push_back(std::move(n));
  return Var<T>(this, nodes_.size() - 1);
}

template <typename T>
void Tape<T>::backward(const Var<T>& loss, std::vector<std::size_t>* visit_log) {
  if (&loss.tape() != this) throw ContractError("backward: loss belongs to a different tape");
  if (loss.value().numel() != 1) {
    throw ContractError("backward: loss must be scalar, got shape " + shape_str(loss.shape()));
  }
  if (requires_grad(loss.id())) {
    grad(loss.id()).fill(T(1));
    for (std::size_t i = loss.id() + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.requires_grad || n.grad.empty()) continue;
      if (n.param != nullptr) {
        Tensor<T>& pg = n.param->grad;
        if (pg.shape() != n.grad.shape()) pg = Tensor<T>::zeros(n.grad.shape());
        for (std::size_t k = 0; k < pg.numel(); ++k) pg[k] += n.grad[k];
      } else if (n.backward) {
        if (visit_log) visit_log->push_back(i);
        n.backward(*this, n.grad);
      }
    }
  }
  clear();
}

template class Tape<float>;
template class Tape<double>;

}  // namespace hfan
