#include "tatrans/params.hpp"

#include <cmath>

#include "tatrans/error.hpp"

namespace tatrans::nn {

std::string shape_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += ", ";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

template <typename T>
std::size_t ParameterStore<T>::add(std::string name, Tensor<T> init) {
  if (find(name)) throw ValidationError("duplicate parameter name: " + name);
  const std::size_t n = init.size();
  params_.push_back({std::move(name), std::move(init), std::vector<T>(n), std::vector<T>(n), std::vector<T>(n)});
  return params_.size() - 1;
}

template <typename T>
std::optional<std::size_t> ParameterStore<T>::find(std::string_view name) const {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (params_[i].name == name) return i;
  }
  return std::nullopt;
}

template <typename T>
std::size_t ParameterStore<T>::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

template <typename T>
void ParameterStore<T>::zero_grad() {
  for (auto& p : params_) std::fill(p.grad.begin(), p.grad.end(), T{});
}

template <typename T>
double ParameterStore<T>::grad_norm() const {
  double sq = 0.0;
  for (const auto& p : params_) {
    for (T g : p.grad) sq += static_cast<double>(g) * static_cast<double>(g);
  }
  return std::sqrt(sq);
}

template <typename T>
Tensor<T> init_uniform(Shape shape, std::size_t fan_in, Rng& rng) {
  Tensor<T> t(std::move(shape));
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (auto& v : t.data) v = static_cast<T>(rng.uniform(-bound, bound));
  return t;
}

template <typename T>
void adam_step(ParameterStore<T>& store, double lr, double beta1, double beta2, double eps) {
  for (std::size_t i = 0; i < store.size(); ++i) {
    for (T g : store[i].grad) {
      if (!std::isfinite(static_cast<double>(g))) {
        throw DivergenceError(store[i].name, "non-finite gradient in parameter '" + store[i].name + "'");
      }
    }
  }
  ++store.step_count;
  const double t = static_cast<double>(store.step_count);
  const double c1 = 1.0 - std::pow(beta1, t);
  const double c2 = 1.0 - std::pow(beta2, t);
  for (std::size_t i = 0; i < store.size(); ++i) {
    auto& p = store[i];
    for (std::size_t k = 0; k < p.grad.size(); ++k) {
      const double g = p.grad[k];
      const double m = beta1 * p.moment1[k] + (1.0 - beta1) * g;
      const double v = beta2 * p.moment2[k] + (1.0 - beta2) * g * g;
      p.moment1[k] = static_cast<T>(m);
      p.moment2[k] = static_cast<T>(v);
      p.value.data[k] -= static_cast<T>(lr * (m / c1) / (std::sqrt(v / c2) + eps));
      p.grad[k] = T{};
    }
  }
}

template <typename T>
double clip_grad_norm(ParameterStore<T>& store, double max_norm) {
  const double norm = store.grad_norm();
  if (norm > max_norm && std::isfinite(norm)) {
    const T scale = static_cast<T>(max_norm / norm);
    for (std::size_t i = 0; i < store.size(); ++i) {
      for (auto& g : store[i].grad) g *= scale;
    }
  }
  return norm;
}

double warmup_inverse_sqrt(std::uint64_t step, double base_lr, std::uint64_t warmup) {
  const double s = static_cast<double>(std::max<std::uint64_t>(step, 1));
  if (warmup == 0) return base_lr;
  const double w = static_cast<double>(warmup);
  return s <= w ? base_lr * s / w : base_lr * std::sqrt(w / s);
}

template class ParameterStore<float>;
template class ParameterStore<double>;
template Tensor<float> init_uniform(Shape, std::size_t, Rng&);
template Tensor<double> init_uniform(Shape, std::size_t, Rng&);
template void adam_step(ParameterStore<float>&, double, double, double, double);
template void adam_step(ParameterStore<double>&, double, double, double, double);
template double clip_grad_norm(ParameterStore<float>&, double);
template double clip_grad_norm(ParameterStore<double>&, double);

}  // namespace tatrans::nn
