#pragma once

#include <string>
#include <vector>

#include "tatrans/ops.hpp"

namespace tatrans::nn {

struct LinearIds {
  std::size_t weight = 0;  // [in, out]
  std::size_t bias = 0;    // [out]
};

struct NormIds {
  std::size_t gamma = 0;
  std::size_t beta = 0;
};

struct AttentionIds {
  LinearIds q, k, v, o;
};

struct FeedForwardIds {
  LinearIds up, down;
};

/// Training-time dropout; inactive when rng is null or p is zero.
struct DropoutCtx {
  double p = 0.0;
  Rng* rng = nullptr;
};

template <typename T>
LinearIds add_linear(ParameterStore<T>& store, const std::string& name, std::size_t in, std::size_t out, Rng& rng);
template <typename T>
NormIds add_norm(ParameterStore<T>& store, const std::string& name, std::size_t dim);
template <typename T>
AttentionIds add_attention(ParameterStore<T>& store, const std::string& name, std::size_t dim, Rng& rng);
template <typename T>
FeedForwardIds add_feed_forward(ParameterStore<T>& store, const std::string& name, std::size_t dim, std::size_t hidden,
                                Rng& rng);

template <typename T>
Var linear(Graph<T>& g, const LinearIds& ids, Var x);
template <typename T>
Var norm(Graph<T>& g, const NormIds& ids, Var x);
/// Projects query_in and kv_in, attends, and applies the output projection.
template <typename T>
Var multi_head_attention(Graph<T>& g, const AttentionIds& ids, Var query_in, Var kv_in, const AttentionLayout& layout);
template <typename T>
Var feed_forward(Graph<T>& g, const FeedForwardIds& ids, Var x, const DropoutCtx& drop);

/// x + dropout(f_out), the residual connection.
template <typename T>
Var residual(Graph<T>& g, Var x, Var f_out, const DropoutCtx& drop);

/// Sequences right-padded into one row block.
struct PaddedBatch {
  std::vector<int> ids;                // batch * length
  std::vector<std::size_t> lengths;    // true length per sequence
  std::size_t batch = 0;
  std::size_t length = 0;              // padded length
  std::vector<int> positions() const;  // 0..length-1 repeated per sequence
};

PaddedBatch pad_batch(const std::vector<std::vector<int>>& seqs, int pad_id);

}  // namespace tatrans::nn
