#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <span>
#include <unordered_map>
#include <vector>

#include "tatrans/params.hpp"
#include "tatrans/tensor.hpp"

namespace tatrans::nn {

/// Handle to a node on a Graph tape.
struct Var {
  std::int32_t id = -1;
  bool valid() const { return id >= 0; }
};

/// Define-by-run tape for reverse-mode differentiation. Nodes are appended in
/// evaluation order, so reverse insertion order is a valid topological order.
///
/// Parameters are bound once per graph; backward() adds their gradients into the
/// owning ParameterStore, so every use of a parameter contributes to its gradient.
template <typename T>
class Graph {
 public:
  using Backward = std::function<void(Graph&, Var self)>;

  /// Inference-only graph: parameters are read, nothing records backward closures.
  explicit Graph(const ParameterStore<T>& store);
  /// Training graph bound to a mutable store.
  explicit Graph(ParameterStore<T>& store, bool grad_enabled = true);
  /// Graph without parameters (tests, free-standing math).
  explicit Graph(bool grad_enabled = true);

  Var constant(Tensor<T> value);
  /// Leaf that takes part in differentiation; its gradient is readable after backward().
  Var input(Tensor<T> value);
  Var param(std::size_t index);

  const Tensor<T>& value(Var v) const { return nodes_[idx(v)].value; }
  const Shape& shape(Var v) const { return nodes_[idx(v)].value.shape; }
  /// Empty when the node received no gradient.
  const std::vector<T>& grad(Var v) const { return nodes_[idx(v)].grad; }

  bool grad_enabled() const { return grad_enabled_; }
  bool requires_grad(Var v) const { return nodes_[idx(v)].requires_grad; }

  /// Seeds d(loss)/d(loss) = 1 and propagates. Throws ValidationError if loss is not a scalar.
  void backward(Var loss);

  // --- for op implementations ---
  Var record(Tensor<T> value, std::initializer_list<Var> parents, Backward fn);
  /// Gradient buffer of `v`, zero-initialized on first access.
  std::vector<T>& grad_buffer(Var v);
  std::size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor<T> value;
    std::vector<T> grad;
    Backward backward;
    bool requires_grad = false;
    std::int32_t param_index = -1;
  };

  std::size_t idx(Var v) const { return static_cast<std::size_t>(v.id); }

  std::vector<Node> nodes_;
  const ParameterStore<T>* store_ = nullptr;
  ParameterStore<T>* mutable_store_ = nullptr;
  std::unordered_map<std::size_t, Var> bound_params_;
  bool grad_enabled_ = true;
};

}  // namespace tatrans::nn
