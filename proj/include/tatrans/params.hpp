#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "tatrans/random.hpp"
#include "tatrans/tensor.hpp"

namespace tatrans::nn {

template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  std::vector<T> grad;    // same length as value, zero when cleared
  std::vector<T> moment1; // Adam first moment
  std::vector<T> moment2; // Adam second moment
};

/// Named trainable parameters plus optimizer state. Insertion order is stable and
/// defines checkpoint layout.
template <typename T>
class ParameterStore {
 public:
  std::size_t add(std::string name, Tensor<T> init);

  std::size_t size() const { return params_.size(); }
  Parameter<T>& operator[](std::size_t i) { return params_[i]; }
  const Parameter<T>& operator[](std::size_t i) const { return params_[i]; }
  std::optional<std::size_t> find(std::string_view name) const;

  /// Total scalar count across all parameters.
  std::size_t scalar_count() const;

  void zero_grad();
  /// Euclidean norm over every gradient entry.
  double grad_norm() const;

  std::uint64_t step_count = 0;

 private:
  std::vector<Parameter<T>> params_;
};

/// Uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)].
template <typename T>
Tensor<T> init_uniform(Shape shape, std::size_t fan_in, Rng& rng);

/// Bias-corrected Adam. Checks every gradient before touching any parameter and
/// throws DivergenceError naming the first non-finite one. Clears gradients.
template <typename T>
void adam_step(ParameterStore<T>& store, double lr, double beta1 = 0.9, double beta2 = 0.98, double eps = 1e-9);

/// Rescales gradients so their global norm is at most max_norm. Returns the norm before clipping.
template <typename T>
double clip_grad_norm(ParameterStore<T>& store, double max_norm);

/// Linear warmup to base_lr over `warmup` steps, then base_lr * sqrt(warmup / step).
/// Steps count from 1.
double warmup_inverse_sqrt(std::uint64_t step, double base_lr, std::uint64_t warmup);

}  // namespace tatrans::nn
