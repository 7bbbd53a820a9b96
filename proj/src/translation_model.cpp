#include "tatrans/translation_model.hpp"

#include <algorithm>

#include "tatrans/error.hpp"
#include "tatrans/tokenizer.hpp"

namespace tatrans {

using nn::Graph;
using nn::Tensor;
using nn::Var;

void TransformerConfig::validate() const {
  auto positive = [](std::size_t v, const char* name) {
    if (v == 0) throw ValidationError(std::string("transformer config: ") + name + " must be positive");
  };
  positive(num_layers, "num_layers");
  positive(num_heads, "num_heads");
  positive(model_dim, "model_dim");
  positive(ffn_dim, "ffn_dim");
  positive(max_len, "max_len");
  if (model_dim % num_heads != 0) {
    throw ValidationError("transformer config: model_dim " + std::to_string(model_dim) + " not divisible by num_heads " +
                          std::to_string(num_heads));
  }
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ValidationError("transformer config: dropout must be in [0,1)");
}

nlohmann::json TransformerConfig::to_json() const {
  return {{"num_layers", num_layers}, {"num_heads", num_heads}, {"model_dim", model_dim},
          {"ffn_dim", ffn_dim},       {"max_len", max_len},     {"dropout", dropout},
          {"share_decoder_embeddings", share_decoder_embeddings}};
}

TransformerConfig TransformerConfig::from_json(const nlohmann::json& j) {
  TransformerConfig c;
  try {
    c.num_layers = j.value("num_layers", c.num_layers);
    c.num_heads = j.value("num_heads", c.num_heads);
    c.model_dim = j.value("model_dim", c.model_dim);
    c.ffn_dim = j.value("ffn_dim", c.ffn_dim);
    c.max_len = j.value("max_len", c.max_len);
    c.dropout = j.value("dropout", c.dropout);
    c.share_decoder_embeddings = j.value("share_decoder_embeddings", c.share_decoder_embeddings);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("invalid transformer config: ") + e.what());
  }
  c.validate();
  return c;
}

std::vector<int> decoder_input(const std::vector<int>& target) {
  std::vector<int> out{kBos};
  out.insert(out.end(), target.begin(), target.end());
  return out;
}

std::vector<int> decoder_labels(const std::vector<int>& target) {
  std::vector<int> out(target);
  out.push_back(kEos);
  return out;
}

template <typename T>
TranslationModel<T>::TranslationModel(const TransformerConfig& config, std::size_t src_vocab, std::size_t tgt_vocab,
                                      std::uint64_t seed)
    : config_(config), src_vocab_(src_vocab), tgt_vocab_(tgt_vocab) {
  config_.validate();
  if (src_vocab == 0 || tgt_vocab == 0) throw ValidationError("vocabulary sizes must be positive");
  Rng rng(seed);
  const std::size_t d = config_.model_dim;
  src_embed_ = store_.add("src_embed", nn::init_uniform<T>({src_vocab, d}, d, rng));
  tgt_embed_ = store_.add("tgt_embed", nn::init_uniform<T>({tgt_vocab, d}, d, rng));
  enc_pos_ = store_.add("enc_pos", nn::init_uniform<T>({config_.max_len, d}, d, rng));
  dec_pos_ = store_.add("dec_pos", nn::init_uniform<T>({config_.max_len, d}, d, rng));
  null_ctx_ = store_.add("null_context", nn::init_uniform<T>({1, d}, d, rng));
  for (std::size_t l = 0; l < config_.num_layers; ++l) {
    const std::string p = "enc." + std::to_string(l);
    EncoderLayer layer;
    layer.ln1 = nn::add_norm(store_, p + ".ln1", d);
    layer.self_attn = nn::add_attention(store_, p + ".self_attn", d, rng);
    layer.ln2 = nn::add_norm(store_, p + ".ln2", d);
    layer.ffn = nn::add_feed_forward(store_, p + ".ffn", d, config_.ffn_dim, rng);
    encoder_.push_back(layer);
  }
  enc_final_ = nn::add_norm(store_, "enc.final_ln", d);
  for (std::size_t l = 0; l < config_.num_layers; ++l) {
    const std::string p = "dec." + std::to_string(l);
    DecoderLayer layer;
    layer.ln1 = nn::add_norm(store_, p + ".ln1", d);
    layer.self_attn = nn::add_attention(store_, p + ".self_attn", d, rng);
    layer.ln2 = nn::add_norm(store_, p + ".ln2", d);
    layer.cross_attn = nn::add_attention(store_, p + ".cross_attn", d, rng);
    layer.ln3 = nn::add_norm(store_, p + ".ln3", d);
    layer.ffn = nn::add_feed_forward(store_, p + ".ffn", d, config_.ffn_dim, rng);
    decoder_.push_back(layer);
  }
  dec_final_ = nn::add_norm(store_, "dec.final_ln", d);
  if (!config_.share_decoder_embeddings) tgt_out_ = store_.add("tgt_out", nn::init_uniform<T>({tgt_vocab, d}, d, rng));
  src_out_ = store_.add("src_out", nn::init_uniform<T>({src_vocab, d}, d, rng));
}

template <typename T>
std::size_t TranslationModel<T>::input_embedding(Direction dir, bool encoder_side) const {
  const bool ancient = (dir == Direction::Forward) == encoder_side;
  return ancient ? src_embed_ : tgt_embed_;
}

template <typename T>
Var TranslationModel<T>::output_logits(Graph<T>& g, Var hidden, Direction dir) const {
  std::size_t table = src_out_;
  if (dir == Direction::Forward) table = tgt_out_ ? *tgt_out_ : tgt_embed_;
  return nn::matmul(g, hidden, g.param(table), nn::Transpose::Yes);
}

template <typename T>
void TranslationModel<T>::check_length(std::size_t len, const char* what) const {
  if (len == 0) throw ValidationError(std::string(what) + " is empty");
  if (len > config_.max_len) {
    throw ValidationError(std::string(what) + " has " + std::to_string(len) + " tokens, over the limit of " +
                          std::to_string(config_.max_len));
  }
}

template <typename T>
EncoderState TranslationModel<T>::encode(Graph<T>& g, const std::vector<std::vector<int>>& sources, Direction dir,
                                         const nn::DropoutCtx& drop) const {
  if (sources.empty()) throw ValidationError("encode: empty batch");
  for (const auto& s : sources) check_length(s.size(), "source sentence");
  const auto pb = nn::pad_batch(sources, kPad);
  const auto pos = pb.positions();
  Var x = nn::add(g, nn::embedding(g, g.param(input_embedding(dir, true)), pb.ids), nn::embedding(g, g.param(enc_pos_), pos));
  nn::AttentionLayout layout{pb.batch, pb.length, pb.length, pb.lengths, config_.num_heads, false};
  for (const auto& layer : encoder_) {
    Var h = nn::norm(g, layer.ln1, x);
    x = nn::residual(g, x, nn::multi_head_attention(g, layer.self_attn, h, h, layout), drop);
    h = nn::norm(g, layer.ln2, x);
    x = nn::residual(g, x, nn::feed_forward(g, layer.ffn, h, drop), drop);
  }
  return EncoderState{nn::norm(g, enc_final_, x), pb.batch, pb.length, pb.lengths};
}

template <typename T>
EncoderState TranslationModel<T>::null_context(Graph<T>& g, std::size_t batch) const {
  const std::vector<int> zeros(batch, 0);
  return EncoderState{nn::embedding(g, g.param(null_ctx_), zeros), batch, 1, std::vector<std::size_t>(batch, 1)};
}

template <typename T>
Var TranslationModel<T>::decode(Graph<T>& g, const EncoderState& memory, const std::vector<std::vector<int>>& inputs,
                                Direction dir, const nn::DropoutCtx& drop) const {
  if (inputs.size() != memory.batch) {
    throw ValidationError("decode: " + std::to_string(inputs.size()) + " decoder inputs for an encoder batch of " +
                          std::to_string(memory.batch));
  }
  for (const auto& s : inputs) check_length(s.size(), "decoder input");
  const auto pb = nn::pad_batch(inputs, kPad);
  const auto pos = pb.positions();
  Var y = nn::add(g, nn::embedding(g, g.param(input_embedding(dir, false)), pb.ids), nn::embedding(g, g.param(dec_pos_), pos));
  nn::AttentionLayout self_layout{pb.batch, pb.length, pb.length, pb.lengths, config_.num_heads, true};
  nn::AttentionLayout cross_layout{pb.batch, pb.length, memory.length, memory.lengths, config_.num_heads, false};
  for (const auto& layer : decoder_) {
    Var h = nn::norm(g, layer.ln1, y);
    y = nn::residual(g, y, nn::multi_head_attention(g, layer.self_attn, h, h, self_layout), drop);
    h = nn::norm(g, layer.ln2, y);
    y = nn::residual(g, y, nn::multi_head_attention(g, layer.cross_attn, h, memory.memory, cross_layout), drop);
    h = nn::norm(g, layer.ln3, y);
    y = nn::residual(g, y, nn::feed_forward(g, layer.ffn, h, drop), drop);
  }
  return output_logits(g, nn::norm(g, dec_final_, y), dir);
}

namespace {

// Labels padded with -1 to the decoder's padded length.
std::vector<int> padded_labels(const std::vector<std::vector<int>>& targets, std::size_t length) {
  std::vector<int> labels(targets.size() * length, -1);
  for (std::size_t b = 0; b < targets.size(); ++b) {
    const auto framed = decoder_labels(targets[b]);
    std::copy(framed.begin(), framed.end(), labels.begin() + static_cast<std::ptrdiff_t>(b * length));
  }
  return labels;
}

std::size_t max_framed(const std::vector<std::vector<int>>& targets) {
  std::size_t m = 0;
  for (const auto& t : targets) m = std::max(m, t.size() + 1);
  return m;
}

}  // namespace

template <typename T>
Var TranslationModel<T>::forward_loss(Graph<T>& g, std::span<const TokenPair> batch, Direction dir,
                                      const nn::DropoutCtx& drop) const {
  if (batch.empty()) throw ValidationError("forward_loss: empty batch");
  std::vector<std::vector<int>> sources, targets, inputs;
  for (const auto& p : batch) {
    sources.push_back(p.source);
    targets.push_back(p.target);
    inputs.push_back(decoder_input(p.target));
  }
  const EncoderState mem = encode(g, sources, dir, drop);
  const Var logits = decode(g, mem, inputs, dir, drop);
  return nn::cross_entropy(g, logits, padded_labels(targets, max_framed(targets)));
}

template <typename T>
Var TranslationModel<T>::lm_loss(Graph<T>& g, const std::vector<std::vector<int>>& sentences, Direction dir,
                                 const nn::DropoutCtx& drop) const {
  if (sentences.empty()) throw ValidationError("lm_loss: empty batch");
  std::vector<std::vector<int>> inputs;
  for (const auto& s : sentences) inputs.push_back(decoder_input(s));
  const EncoderState mem = null_context(g, sentences.size());
  const Var logits = decode(g, mem, inputs, dir, drop);
  return nn::cross_entropy(g, logits, padded_labels(sentences, max_framed(sentences)));
}

template <typename T>
TranslationScorer<T>::TranslationScorer(const TranslationModel<T>& model, const std::vector<int>& source)
    : model_(model), source_len_(source.size()) {
  Graph<T> g(model.params());
  const EncoderState enc = model.encode(g, {source});
  memory_ = g.value(enc.memory);
}

template <typename T>
std::vector<std::vector<double>> TranslationScorer<T>::next_log_probs(const std::vector<std::vector<int>>& prefixes) {
  const std::size_t n = prefixes.size();
  const std::size_t d = model_.config().model_dim;
  Graph<T> g(model_.params());
  Tensor<T> mem(nn::Shape{n * source_len_, d});
  for (std::size_t b = 0; b < n; ++b) std::copy(memory_.data.begin(), memory_.data.end(), mem.data.begin() + static_cast<std::ptrdiff_t>(b * memory_.size()));
  const EncoderState state{g.constant(std::move(mem)), n, source_len_, std::vector<std::size_t>(n, source_len_)};
  std::vector<std::vector<int>> inputs;
  for (const auto& p : prefixes) inputs.push_back(decoder_input(p));
  const auto& logits = g.value(model_.decode(g, state, inputs));
  const std::size_t len = inputs.empty() ? 0 : inputs[0].size();
  const std::size_t vocab = logits.cols();
  std::vector<std::vector<double>> out(n);
  for (std::size_t b = 0; b < n; ++b) {
    Tensor<T> row(nn::Shape{1, vocab});
    std::copy_n(&logits.data[(b * len + len - 1) * vocab], vocab, row.data.begin());
    const auto lp = nn::log_softmax_rows(row);
    out[b].assign(lp.data.begin(), lp.data.end());
  }
  return out;
}

template <typename T>
std::vector<BeamHypothesis> translate_beam(const TranslationModel<T>& model, const std::vector<int>& source,
                                           const BeamOptions& options) {
  if (source.empty()) return {BeamHypothesis{{options.eos}, 0.0, true}};
  BeamOptions opts = options;
  opts.max_len = std::min(opts.max_len, model.config().max_len);
  TranslationScorer<T> scorer(model, source);
  return beam_search(scorer, opts);
}

template <typename T>
std::vector<std::vector<int>> greedy_translate(const TranslationModel<T>& model,
                                               const std::vector<std::vector<int>>& sources, std::size_t max_len,
                                               std::size_t chunk) {
  max_len = std::min(max_len, model.config().max_len);
  const std::size_t d = model.config().model_dim;
  std::vector<std::vector<int>> out(sources.size());
  for (std::size_t start = 0; start < sources.size(); start += chunk) {
    std::vector<std::size_t> members;
    std::vector<std::vector<int>> batch;
    for (std::size_t i = start; i < std::min(sources.size(), start + chunk); ++i) {
      if (sources[i].empty()) continue;
      members.push_back(i);
      batch.push_back(sources[i]);
    }
    if (batch.empty()) continue;
    Tensor<T> memory;
    EncoderState enc;
    {
      Graph<T> g(model.params());
      enc = model.encode(g, batch);
      memory = g.value(enc.memory);
    }
    std::vector<std::vector<int>> prefix(batch.size());
    std::vector<bool> done(batch.size(), false);
    for (std::size_t step = 0; step < max_len; ++step) {
      std::vector<std::size_t> active;
      for (std::size_t b = 0; b < batch.size(); ++b) {
        if (!done[b]) active.push_back(b);
      }
      if (active.empty()) break;
      Graph<T> g(model.params());
      Tensor<T> mem(nn::Shape{active.size() * enc.length, d});
      std::vector<std::size_t> lengths;
      std::vector<std::vector<int>> inputs;
      for (std::size_t a = 0; a < active.size(); ++a) {
        const std::size_t b = active[a];
        std::copy_n(&memory.data[b * enc.length * d], enc.length * d, &mem.data[a * enc.length * d]);
        lengths.push_back(enc.lengths[b]);
        inputs.push_back(decoder_input(prefix[b]));
      }
      const EncoderState state{g.constant(std::move(mem)), active.size(), enc.length, lengths};
      const auto& logits = g.value(model.decode(g, state, inputs));
      const std::size_t len = step + 1;
      const std::size_t vocab = logits.cols();
      for (std::size_t a = 0; a < active.size(); ++a) {
        const T* row = &logits.data[(a * len + len - 1) * vocab];
        const int best = static_cast<int>(std::max_element(row, row + vocab) - row);
        if (best == kEos) {
          done[active[a]] = true;
        } else {
          prefix[active[a]].push_back(best);
        }
      }
    }
    for (std::size_t b = 0; b < batch.size(); ++b) out[members[b]] = std::move(prefix[b]);
  }
  return out;
}

template class TranslationModel<float>;
template class TranslationModel<double>;
template class TranslationScorer<float>;
template class TranslationScorer<double>;
template std::vector<BeamHypothesis> translate_beam(const TranslationModel<float>&, const std::vector<int>&,
                                                    const BeamOptions&);
template std::vector<BeamHypothesis> translate_beam(const TranslationModel<double>&, const std::vector<int>&,
                                                    const BeamOptions&);
template std::vector<std::vector<int>> greedy_translate(const TranslationModel<float>&,
                                                        const std::vector<std::vector<int>>&, std::size_t, std::size_t);
template std::vector<std::vector<int>> greedy_translate(const TranslationModel<double>&,
                                                        const std::vector<std::vector<int>>&, std::size_t, std::size_t);

}  // namespace tatrans
