#pragma once

#include <deque>
#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include "crynet/nn/array.hpp"
#include "crynet/nn/param_store.hpp"

namespace crynet::nn {

enum class Mode { Train, Eval };

template <typename T>
class Graph;

/// Handle to a node of a Graph. Cheap to copy; valid while the graph lives.
template <typename T>
class Var {
 public:
  Var() = default;
  Var(Graph<T>* graph, int id) : graph_(graph), id_(id) {}

  [[nodiscard]] Graph<T>& graph() const { return *graph_; }
  [[nodiscard]] int id() const { return id_; }
  [[nodiscard]] bool valid() const { return graph_ != nullptr; }

  [[nodiscard]] const Array<T>& value() const;
  [[nodiscard]] const Array<T>& grad() const;
  [[nodiscard]] const Shape& shape() const { return value().shape(); }
  [[nodiscard]] std::size_t dim(std::size_t axis) const { return value().dim(axis); }

 private:
  Graph<T>* graph_ = nullptr;
  int id_ = -1;
};

template <typename T>
struct Node {
  using BackwardFn = std::function<void(Graph<T>&, Node<T>&)>;

  std::string op;
  Array<T> value;
  Array<T> grad;  // allocated lazily during backward
  std::vector<int> parents;
  BackwardFn backward;
  bool requires_grad = false;
  bool leaf = false;
  Parameter<T>* param = nullptr;  // set for parameter leaves
};

/// Reverse-mode tape. Nodes are appended in evaluation order, so walking the
/// tape backwards is a valid topological order. Gradients accumulate, which
/// makes fan-out (a node used twice) correct by construction.
template <typename T>
class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  /// Leaf that never receives gradient.
  Var<T> constant(Array<T> value);
  /// Leaf whose gradient is kept after backward (inputs under test).
  Var<T> variable(Array<T> value);
  /// Leaf bound to a stored parameter. Binding the same name twice returns
  /// the same node; backward adds its gradient into the store.
  Var<T> parameter(ParamStore<T>& store, const std::string& name);

  /// Appends an op result. Throws NumericalError on non-finite values.
  Var<T> record(std::string op, Array<T> value, std::vector<int> parents, typename Node<T>::BackwardFn backward);

  /// Backpropagates from a scalar root (seed 1) or with an explicit seed.
  /// Intermediate gradients are freed as soon as they have been propagated.
  void backward(Var<T> root);
  void backward(Var<T> root, const Array<T>& seed);

  Node<T>& node(int id) { return nodes_.at(static_cast<std::size_t>(id)); }
  const Node<T>& node(int id) const { return nodes_.at(static_cast<std::size_t>(id)); }
  [[nodiscard]] std::size_t size() const { return nodes_.size(); }

  /// Gradient buffer of a node, zero-initialised on first use.
  Array<T>& grad_buffer(int id);
  [[nodiscard]] bool requires_grad(int id) const { return node(id).requires_grad; }

  /// When false, backward also frees non-leaf values once they
  /// are no longer needed, which bounds peak memory during training.
  void set_retain_values(bool retain) { retain_values_ = retain; }

 private:
  std::deque<Node<T>> nodes_;  // stable references while ops append
  std::unordered_map<const Parameter<T>*, int> bound_;
  bool retain_values_ = true;
};

template <typename T>
const Array<T>& Var<T>::value() const {
  return graph_->node(id_).value;
}

template <typename T>
const Array<T>& Var<T>::grad() const {
  return graph_->node(id_).grad;
}

extern template class Graph<float>;
extern template class Graph<double>;

}  // namespace crynet::nn
