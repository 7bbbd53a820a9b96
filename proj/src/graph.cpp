#include "tatrans/graph.hpp"

#include "tatrans/error.hpp"

namespace tatrans::nn {

template <typename T>
Graph<T>::Graph(const ParameterStore<T>& store) : store_(&store), grad_enabled_(false) {}

template <typename T>
Graph<T>::Graph(ParameterStore<T>& store, bool grad_enabled)
    : store_(&store), mutable_store_(grad_enabled ? &store : nullptr), grad_enabled_(grad_enabled) {}

template <typename T>
Graph<T>::Graph(bool grad_enabled) : grad_enabled_(grad_enabled) {}

template <typename T>
Var Graph<T>::constant(Tensor<T> value) {
  nodes_.push_back({std::move(value), {}, {}, false, -1});
  return Var{static_cast<std::int32_t>(nodes_.size() - 1)};
}

template <typename T>
Var Graph<T>::input(Tensor<T> value) {
  nodes_.push_back({std::move(value), {}, {}, grad_enabled_, -1});
  return Var{static_cast<std::int32_t>(nodes_.size() - 1)};
}

template <typename T>
Var Graph<T>::param(std::size_t index) {
  if (store_ == nullptr) throw ValidationError("graph has no parameter store");
  if (index >= store_->size()) throw ValidationError("parameter index out of range");
  if (auto it = bound_params_.find(index); it != bound_params_.end()) return it->second;
  nodes_.push_back({(*store_)[index].value, {}, {}, grad_enabled_ && mutable_store_ != nullptr,
                    static_cast<std::int32_t>(index)});
  Var v{static_cast<std::int32_t>(nodes_.size() - 1)};
  bound_params_.emplace(index, v);
  return v;
}

template <typename T>
Var Graph<T>::record(Tensor<T> value, std::initializer_list<Var> parents, Backward fn) {
  bool needs = false;
  if (grad_enabled_) {
    for (Var p : parents) needs = needs || nodes_[idx(p)].requires_grad;
  }
  nodes_.push_back({std::move(value), {}, needs ? std::move(fn) : Backward{}, needs, -1});
  return Var{static_cast<std::int32_t>(nodes_.size() - 1)};
}

template <typename T>
std::vector<T>& Graph<T>::grad_buffer(Var v) {
  auto& node = nodes_[idx(v)];
  if (node.grad.empty()) node.grad.assign(node.value.size(), T{});
  return node.grad;
}

template <typename T>
void Graph<T>::backward(Var loss) {
  if (!grad_enabled_) throw ValidationError("backward() on a graph built without gradients");
  if (value(loss).size() != 1) {
    throw ValidationError("backward() needs a scalar loss, got shape " + shape_string(shape(loss)));
  }
  grad_buffer(loss)[0] = T{1};
  for (std::size_t i = static_cast<std::size_t>(loss.id) + 1; i-- > 0;) {
    auto& node = nodes_[i];
    if (node.grad.empty() || !node.backward) continue;
    node.backward(*this, Var{static_cast<std::int32_t>(i)});
  }
  if (mutable_store_ == nullptr) return;
  for (const auto& [index, v] : bound_params_) {
    const auto& g = nodes_[idx(v)].grad;
    if (g.empty()) continue;
    auto& dst = (*mutable_store_)[index].grad;
    for (std::size_t k = 0; k < g.size(); ++k) dst[k] += g[k];
  }
}

template class Graph<float>;
template class Graph<double>;

}  // namespace tatrans::nn
