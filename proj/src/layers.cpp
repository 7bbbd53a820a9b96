#include "tatrans/layers.hpp"

#include <algorithm>

namespace tatrans::nn {

template <typename T>
LinearIds add_linear(ParameterStore<T>& store, const std::string& name, std::size_t in, std::size_t out, Rng& rng) {
  LinearIds ids;
  ids.weight = store.add(name + ".weight", init_uniform<T>(Shape{in, out}, in, rng));
  ids.bias = store.add(name + ".bias", Tensor<T>(Shape{out}));
  return ids;
}

template <typename T>
NormIds add_norm(ParameterStore<T>& store, const std::string& name, std::size_t dim) {
  return {store.add(name + ".gamma", Tensor<T>(Shape{dim}, T{1})), store.add(name + ".beta", Tensor<T>(Shape{dim}))};
}

template <typename T>
AttentionIds add_attention(ParameterStore<T>& store, const std::string& name, std::size_t dim, Rng& rng) {
  AttentionIds ids;
  ids.q = add_linear(store, name + ".q", dim, dim, rng);
  ids.k = add_linear(store, name + ".k", dim, dim, rng);
  ids.v = add_linear(store, name + ".v", dim, dim, rng);
  ids.o = add_linear(store, name + ".o", dim, dim, rng);
  return ids;
}

template <typename T>
FeedForwardIds add_feed_forward(ParameterStore<T>& store, const std::string& name, std::size_t dim, std::size_t hidden,
                                Rng& rng) {
  return {add_linear(store, name + ".up", dim, hidden, rng), add_linear(store, name + ".down", hidden, dim, rng)};
}

template <typename T>
Var linear(Graph<T>& g, const LinearIds& ids, Var x) {
  return add_bias(g, matmul(g, x, g.param(ids.weight)), g.param(ids.bias));
}

template <typename T>
Var norm(Graph<T>& g, const NormIds& ids, Var x) {
  return layer_norm(g, x, g.param(ids.gamma), g.param(ids.beta));
}

template <typename T>
Var multi_head_attention(Graph<T>& g, const AttentionIds& ids, Var query_in, Var kv_in, const AttentionLayout& layout) {
  Var q = linear(g, ids.q, query_in);
  Var k = linear(g, ids.k, kv_in);
  Var v = linear(g, ids.v, kv_in);
  return linear(g, ids.o, attention(g, q, k, v, layout));
}

template <typename T>
Var feed_forward(Graph<T>& g, const FeedForwardIds& ids, Var x, const DropoutCtx& drop) {
  Var h = relu(g, linear(g, ids.up, x));
  if (drop.rng && drop.p > 0.0) h = dropout(g, h, drop.p, *drop.rng);
  return linear(g, ids.down, h);
}

template <typename T>
Var residual(Graph<T>& g, Var x, Var f_out, const DropoutCtx& drop) {
  if (drop.rng && drop.p > 0.0) f_out = dropout(g, f_out, drop.p, *drop.rng);
  return add(g, x, f_out);
}

std::vector<int> PaddedBatch::positions() const {
  std::vector<int> pos(batch * length);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t i = 0; i < length; ++i) pos[b * length + i] = static_cast<int>(i);
  }
  return pos;
}

PaddedBatch pad_batch(const std::vector<std::vector<int>>& seqs, int pad_id) {
  PaddedBatch out;
  out.batch = seqs.size();
  for (const auto& s : seqs) out.length = std::max(out.length, s.size());
  out.ids.assign(out.batch * out.length, pad_id);
  for (std::size_t b = 0; b < seqs.size(); ++b) {
    std::copy(seqs[b].begin(), seqs[b].end(), out.ids.begin() + static_cast<std::ptrdiff_t>(b * out.length));
    out.lengths.push_back(seqs[b].size());
  }
  return out;
}

#define TATRANS_INSTANTIATE_LAYERS(T)                                                                        \
  template LinearIds add_linear(ParameterStore<T>&, const std::string&, std::size_t, std::size_t, Rng&);     \
  template NormIds add_norm(ParameterStore<T>&, const std::string&, std::size_t);                            \
  template AttentionIds add_attention(ParameterStore<T>&, const std::string&, std::size_t, Rng&);            \
  template FeedForwardIds add_feed_forward(ParameterStore<T>&, const std::string&, std::size_t, std::size_t, \
                                           Rng&);                                                            \
  template Var linear(Graph<T>&, const LinearIds&, Var);                                                     \
  template Var norm(Graph<T>&, const NormIds&, Var);                                                         \
  template Var multi_head_attention(Graph<T>&, const AttentionIds&, Var, Var, const AttentionLayout&);       \
  template Var feed_forward(Graph<T>&, const FeedForwardIds&, Var, const DropoutCtx&);                       \
  template Var residual(Graph<T>&, Var, Var, const DropoutCtx&);

TATRANS_INSTANTIATE_LAYERS(float)
TATRANS_INSTANTIATE_LAYERS(double)

}  // namespace tatrans::nn
