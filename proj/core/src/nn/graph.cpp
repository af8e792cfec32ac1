#include "crynet/nn/graph.hpp"

#include <algorithm>

namespace crynet::nn {

template <typename T>
Var<T> Graph<T>::constant(Array<T> value) {
  if (!value.all_finite()) throw NumericalError("constant contains non-finite values");
  Node<T> n;
  n.op = "constant";
  n.value = std::move(value);
  n.leaf = true;
  nodes_.push_back(std::move(n));
  return Var<T>(this, static_cast<int>(nodes_.size() - 1));
}

template <typename T>
Var<T> Graph<T>::variable(Array<T> value) {
  if (!value.all_finite()) throw NumericalError("variable contains non-finite values");
  Node<T> n;
  n.op = "variable";
  n.value = std::move(value);
  n.leaf = true;
  n.requires_grad = true;
  nodes_.push_back(std::move(n));
  return Var<T>(this, static_cast<int>(nodes_.size() - 1));
}

template <typename T>
Var<T> Graph<T>::parameter(ParamStore<T>& store, const std::string& name) {
  Parameter<T>& p = store.at(name);
  if (auto it = bound_.find(&p); it != bound_.end()) return Var<T>(this, it->second);
  if (!p.value.all_finite()) throw NumericalError("parameter '" + name + "' contains non-finite values");
  Node<T> n;
  n.op = "parameter:" + name;
  n.value = p.value;
  n.leaf = true;
  n.requires_grad = p.trainable;
  n.param = &p;
  nodes_.push_back(std::move(n));
  const int id = static_cast<int>(nodes_.size() - 1);
  bound_.emplace(&p, id);
  return Var<T>(this, id);
}

template <typename T>
Var<T> Graph<T>::record(std::string op, Array<T> value, std::vector<int> parents,
                        typename Node<T>::BackwardFn backward) {
  if (!value.all_finite()) throw NumericalError(op + " produced non-finite values");
  Node<T> n;
  n.op = std::move(op);
  n.value = std::move(value);
  n.requires_grad = std::any_of(parents.begin(), parents.end(), [this](int p) { return node(p).requires_grad; });
  n.parents = std::move(parents);
  if (n.requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var<T>(this, static_cast<int>(nodes_.size() - 1));
}

template <typename T>
Array<T>& Graph<T>::grad_buffer(int id) {
  Node<T>& n = node(id);
  if (n.grad.empty()) n.grad = Array<T>::zeros(n.value.shape());
  return n.grad;
}

template <typename T>
void Graph<T>::backward(Var<T> root) {
  if (root.value().size() != 1) {
    throw ShapeError("backward without a seed needs a scalar root, got " + shape_string(root.shape()));
  }
  backward(root, Array<T>(root.shape(), T(1)));
}

template <typename T>
void Graph<T>::backward(Var<T> root, const Array<T>& seed) {
  if (&root.graph() != this) throw ConfigError("root belongs to another graph");
  if (seed.shape() != root.shape()) {
    throw ShapeError("seed shape " + shape_string(seed.shape()) + " does not match root " + shape_string(root.shape()));
  }
  grad_buffer(root.id()) = seed;
  for (int i = root.id(); i >= 0; --i) {
    Node<T>& n = nodes_[static_cast<std::size_t>(i)];
    const bool active = n.requires_grad && !n.grad.empty();
    if (active && n.backward) n.backward(*this, n);
    if (active && n.param != nullptr) {
      Array<T>& dst = n.param->grad;
      if (dst.empty()) dst = Array<T>::zeros(n.param->value.shape());
      auto src = n.grad.values();
      auto out = dst.values();
      for (std::size_t k = 0; k < out.size(); ++k) out[k] += src[k];
    }
    if (!n.leaf) {
      if (i != root.id()) n.grad.release();
      if (!retain_values_ && i != root.id()) n.value.release();
    }
  }
}

template class Graph<float>;
template class Graph<double>;

}  // namespace crynet::nn
