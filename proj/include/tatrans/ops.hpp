#pragma once

#include <span>
#include <vector>

#include "tatrans/graph.hpp"
#include "tatrans/random.hpp"

namespace tatrans::nn {

// Differentiable operations. Activations are rank-2 [rows, cols]; a batch of
// sequences is stored as batch * padded_length rows. All ops throw
// ValidationError on shape mismatch, naming the op and both shapes.

enum class Transpose { No, Yes };

/// a[m,k] * b[k,n], or a[m,k] * b[n,k]^T with Transpose::Yes.
template <typename T>
Var matmul(Graph<T>& g, Var a, Var b, Transpose tb = Transpose::No);

template <typename T>
Var add(Graph<T>& g, Var a, Var b);

/// x[m,n] + bias[n] broadcast over rows.
template <typename T>
Var add_bias(Graph<T>& g, Var x, Var bias);

template <typename T>
Var mul(Graph<T>& g, Var a, Var b);

template <typename T>
Var scale(Graph<T>& g, Var a, double factor);

template <typename T>
Var relu(Graph<T>& g, Var a);

/// Row-wise softmax.
template <typename T>
Var softmax(Graph<T>& g, Var x);

/// Row-wise normalization to zero mean / unit variance, then gamma * x + beta.
template <typename T>
Var layer_norm(Graph<T>& g, Var x, Var gamma, Var beta, double eps = 1e-5);

/// Rows of table[V,D] selected by ids -> [ids.size(), D].
template <typename T>
Var embedding(Graph<T>& g, Var table, std::span<const int> ids);

/// Mean over rows of -log softmax(logits)[target]; rows whose target is `ignore` are skipped.
/// Throws ValidationError when no row is counted.
template <typename T>
Var cross_entropy(Graph<T>& g, Var logits, std::span<const int> targets, int ignore = -1);

/// Sum of all entries -> scalar.
template <typename T>
Var sum(Graph<T>& g, Var x);

/// Inverted dropout. Identity when p == 0.
template <typename T>
Var dropout(Graph<T>& g, Var x, double p, Rng& rng);

/// Geometry of a batched multi-head attention call.
struct AttentionLayout {
  std::size_t batch = 1;
  std::size_t q_len = 0;                  // padded query rows per sequence
  std::size_t k_len = 0;                  // padded key rows per sequence
  std::vector<std::size_t> k_valid;       // valid keys per sequence (>= 1)
  std::size_t heads = 1;
  bool causal = false;                    // query i sees keys j <= i
};

/// Scaled dot-product attention over heads. q is [batch*q_len, D], k and v are
/// [batch*k_len, D]. Keys at j >= k_valid[b] get zero weight.
template <typename T>
Var attention(Graph<T>& g, Var q, Var k, Var v, const AttentionLayout& layout);

// --- non-differentiable helpers ---

/// Row-wise log-softmax of a [rows, cols] tensor.
template <typename T>
Tensor<T> log_softmax_rows(const Tensor<T>& logits);

}  // namespace tatrans::nn
