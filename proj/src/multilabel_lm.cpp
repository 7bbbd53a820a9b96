#include "tatrans/multilabel_lm.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "tatrans/checkpoint.hpp"
#include "tatrans/error.hpp"

namespace tatrans {

using nn::Graph;
using nn::Var;

namespace {

template <typename J, typename V>
void read_into(const J& j, const char* key, V& out) {
  if (j.contains(key)) out = j.at(key).template get<V>();
}

std::vector<int> lm_input(const std::vector<int>& seq) {
  std::vector<int> in{kBos};
  in.insert(in.end(), seq.begin(), seq.end() - 1);
  return in;
}

}  // namespace

void LMConfig::validate() const {
  auto positive = [](std::size_t v, const char* name) {
    if (v == 0) throw ValidationError(std::string("lm config: ") + name + " must be positive");
  };
  positive(num_layers, "num_layers");
  positive(num_heads, "num_heads");
  positive(model_dim, "model_dim");
  positive(ffn_dim, "ffn_dim");
  positive(context, "context");
  if (model_dim % num_heads != 0) throw ValidationError("lm config: model_dim must be divisible by num_heads");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ValidationError("lm config: dropout must be in [0,1)");
}

nlohmann::json LMConfig::to_json() const {
  return {{"num_layers", num_layers}, {"num_heads", num_heads}, {"model_dim", model_dim},
          {"ffn_dim", ffn_dim},       {"context", context},     {"dropout", dropout}};
}

LMConfig LMConfig::from_json(const nlohmann::json& j) {
  LMConfig c;
  try {
    read_into(j, "num_layers", c.num_layers);
    read_into(j, "num_heads", c.num_heads);
    read_into(j, "model_dim", c.model_dim);
    read_into(j, "ffn_dim", c.ffn_dim);
    read_into(j, "context", c.context);
    read_into(j, "dropout", c.dropout);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("invalid lm config: ") + e.what());
  }
  c.validate();
  return c;
}

std::vector<int> build_query(const QueryTriple& triple, const Vocabulary& joint) {
  const auto label = joint.labels().find(triple.label);
  if (!label) throw ValidationError("label '" + triple.label + "' has no control token in the vocabulary");
  std::vector<int> out{kSepZhA};
  for (int id : joint.encode(triple.ancient)) out.push_back(id);
  out.push_back(kSepZhM);
  for (int id : joint.encode(triple.modern)) out.push_back(id);
  out.push_back(kSepChron);
  out.push_back(joint.label_control(label->index));
  out.push_back(kEos);
  return out;
}

std::vector<int> build_plain(std::string_view text, const Vocabulary& joint) {
  std::vector<int> out = joint.encode(text);
  out.push_back(kEos);
  return out;
}

const char* stage_name(LMStage s) {
  switch (s) {
    case LMStage::Initialized: return "initialized";
    case LMStage::Pretrained: return "pretrained";
    case LMStage::Finetuned: return "finetuned";
  }
  return "?";
}

LMStage parse_stage(std::string_view name) {
  if (name == "initialized") return LMStage::Initialized;
  if (name == "pretrained") return LMStage::Pretrained;
  if (name == "finetuned") return LMStage::Finetuned;
  throw ValidationError("unknown lm stage '" + std::string(name) + "'");
}

template <typename T>
LanguageModel<T>::LanguageModel(const LMConfig& config, std::size_t vocab_size, std::uint64_t seed)
    : config_(config), vocab_size_(vocab_size) {
  config_.validate();
  if (vocab_size == 0) throw ValidationError("lm vocabulary size must be positive");
  Rng rng(seed);
  const std::size_t d = config_.model_dim;
  embed_ = store_.add("embed", nn::init_uniform<T>({vocab_size, d}, d, rng));
  pos_ = store_.add("pos", nn::init_uniform<T>({config_.context, d}, d, rng));
  for (std::size_t l = 0; l < config_.num_layers; ++l) {
    const std::string p = "block." + std::to_string(l);
    Block b;
    b.ln1 = nn::add_norm(store_, p + ".ln1", d);
    b.attn = nn::add_attention(store_, p + ".attn", d, rng);
    b.ln2 = nn::add_norm(store_, p + ".ln2", d);
    b.ffn = nn::add_feed_forward(store_, p + ".ffn", d, config_.ffn_dim, rng);
    blocks_.push_back(b);
  }
  final_ = nn::add_norm(store_, "final_ln", d);
}

template <typename T>
Var LanguageModel<T>::logits(Graph<T>& g, const std::vector<std::vector<int>>& seqs, const nn::DropoutCtx& drop) const {
  if (seqs.empty()) throw ValidationError("lm: empty batch");
  std::vector<std::vector<int>> inputs;
  for (const auto& s : seqs) {
    if (s.empty()) throw ValidationError("lm: empty sequence");
    if (s.size() > config_.context) {
      throw ValidationError("lm: sequence of " + std::to_string(s.size()) + " tokens exceeds the context of " +
                            std::to_string(config_.context));
    }
    inputs.push_back(lm_input(s));
  }
  const auto pb = nn::pad_batch(inputs, kPad);
  const auto pos = pb.positions();
  const Var table = g.param(embed_);
  Var x = nn::add(g, nn::embedding(g, table, pb.ids), nn::embedding(g, g.param(pos_), pos));
  nn::AttentionLayout layout{pb.batch, pb.length, pb.length, pb.lengths, config_.num_heads, true};
  for (const auto& b : blocks_) {
    Var h = nn::norm(g, b.ln1, x);
    x = nn::residual(g, x, nn::multi_head_attention(g, b.attn, h, h, layout), drop);
    h = nn::norm(g, b.ln2, x);
    x = nn::residual(g, x, nn::feed_forward(g, b.ffn, h, drop), drop);
  }
  return nn::matmul(g, nn::norm(g, final_, x), table, nn::Transpose::Yes);
}

template <typename T>
Var LanguageModel<T>::loss(Graph<T>& g, const std::vector<std::vector<int>>& seqs, const nn::DropoutCtx& drop) const {
  const Var out = logits(g, seqs, drop);
  std::size_t len = 0;
  for (const auto& s : seqs) len = std::max(len, s.size());
  std::vector<int> labels(seqs.size() * len, -1);
  for (std::size_t b = 0; b < seqs.size(); ++b) std::copy(seqs[b].begin(), seqs[b].end(), labels.begin() + static_cast<std::ptrdiff_t>(b * len));
  return nn::cross_entropy(g, out, labels);
}

template <typename T>
std::vector<std::vector<double>> LanguageModel<T>::token_nll(const std::vector<std::vector<int>>& seqs,
                                                            std::size_t chunk) const {
  std::vector<std::vector<double>> out(seqs.size());
  for (std::size_t start = 0; start < seqs.size(); start += chunk) {
    const std::size_t end = std::min(seqs.size(), start + chunk);
    std::vector<std::vector<int>> batch(seqs.begin() + static_cast<std::ptrdiff_t>(start),
                                        seqs.begin() + static_cast<std::ptrdiff_t>(end));
    Graph<T> g(store_);
    const auto& lg = g.value(logits(g, batch));
    std::size_t len = 0;
    for (const auto& s : batch) len = std::max(len, s.size());
    const std::size_t v = lg.cols();
    for (std::size_t b = 0; b < batch.size(); ++b) {
      auto& row_out = out[start + b];
      for (std::size_t i = 0; i < batch[b].size(); ++i) {
        const T* row = &lg.data[(b * len + i) * v];
        const double mx = static_cast<double>(*std::max_element(row, row + v));
        double z = 0.0;
        for (std::size_t k = 0; k < v; ++k) z += std::exp(static_cast<double>(row[k]) - mx);
        row_out.push_back(mx + std::log(z) - static_cast<double>(row[batch[b][i]]));
      }
    }
  }
  return out;
}

template <typename T>
std::vector<LMScore> LanguageModel<T>::score_batch(const std::vector<std::vector<int>>& seqs, std::size_t chunk) const {
  std::vector<LMScore> out;
  for (const auto& nll : token_nll(seqs, chunk)) {
    LMScore s;
    s.total_nll = std::accumulate(nll.begin(), nll.end(), 0.0);
    s.token_count = nll.size();
    s.per_token_nll = s.total_nll / static_cast<double>(s.token_count);
    out.push_back(s);
  }
  return out;
}

template <typename T>
LMScore LanguageModel<T>::score(const std::vector<int>& seq) const {
  return score_batch({seq}).front();
}

template <typename T>
LMScore score(const LanguageModel<T>& lm, const QueryTriple& triple, const Vocabulary& joint) {
  return lm.score(build_query(triple, joint));
}

template <typename T>
double perplexity(const LanguageModel<T>& lm, const std::vector<std::vector<int>>& seqs) {
  if (seqs.empty()) throw ValidationError("perplexity: empty dataset");
  double nll = 0.0;
  std::size_t tokens = 0;
  for (const auto& s : lm.score_batch(seqs)) {
    nll += s.total_nll;
    tokens += s.token_count;
  }
  return std::exp(nll / static_cast<double>(tokens));
}

void LMSchedule::validate() const {
  if (batch == 0) throw ValidationError("lm schedule: batch must be positive");
  if (!(lr > 0.0) || !std::isfinite(lr)) throw ValidationError("lm schedule: lr must be positive");
  if (!(clip_norm > 0.0)) throw ValidationError("lm schedule: clip_norm must be positive");
}

nlohmann::json LMSchedule::to_json() const {
  return {{"epochs", epochs}, {"batch", batch},          {"lr", lr},
          {"warmup", warmup}, {"clip_norm", clip_norm}, {"seed", seed}};
}

LMSchedule LMSchedule::from_json(const nlohmann::json& j) {
  LMSchedule s;
  try {
    read_into(j, "epochs", s.epochs);
    read_into(j, "batch", s.batch);
    read_into(j, "lr", s.lr);
    read_into(j, "warmup", s.warmup);
    read_into(j, "clip_norm", s.clip_norm);
    read_into(j, "seed", s.seed);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("invalid lm schedule: ") + e.what());
  }
  s.validate();
  return s;
}

template <typename T>
LMTrainResult train_lm(LanguageModel<T>& lm, const std::vector<std::vector<int>>& train,
                       const std::vector<std::vector<int>>& dev, const LMSchedule& schedule, const LMHooks<T>& hooks) {
  schedule.validate();
  if (train.empty()) throw ValidationError("lm training corpus is empty");
  auto& store = lm.params();
  Rng order_rng(Rng::derive(schedule.seed, 21));
  Rng drop_rng(Rng::derive(schedule.seed, 22));
  const nn::DropoutCtx drop{lm.config().dropout, &drop_rng};
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::optional<nn::ParameterStore<T>> best;
  LMTrainResult result;
  std::size_t step = 0;
  for (std::size_t epoch = 1; epoch <= schedule.epochs; ++epoch) {
    order_rng.shuffle(std::span<std::size_t>(order));
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += schedule.batch) {
      std::vector<std::vector<int>> batch;
      for (std::size_t i = start; i < std::min(order.size(), start + schedule.batch); ++i) batch.push_back(train[order[i]]);
      Graph<T> g(store);
      const Var loss = lm.loss(g, batch, drop);
      const double value = static_cast<double>(g.value(loss).item());
      if (!std::isfinite(value)) throw DivergenceError("loss", "non-finite language-model loss");
      g.backward(loss);
      nn::clip_grad_norm(store, schedule.clip_norm);
      nn::adam_step(store, nn::warmup_inverse_sqrt(store.step_count + 1, schedule.lr, schedule.warmup));
      ++step;
      loss_sum += value;
      ++batches;
    }
    LMEpoch e{epoch, step, loss_sum / static_cast<double>(batches), std::nullopt};
    bool improved = true;
    if (!dev.empty()) {
      e.dev_perplexity = perplexity(lm, dev);
      improved = !result.best_dev_perplexity || *e.dev_perplexity < *result.best_dev_perplexity;
      if (improved) {
        result.best_dev_perplexity = e.dev_perplexity;
        best = store;
      }
    }
    if (improved) result.best_epoch = epoch;
    if (hooks.checkpoint_dir) {
      nlohmann::json meta = hooks.checkpoint_metadata;
      meta["epoch"] = epoch;
      meta["stage"] = stage_name(lm.stage);
      nn::save_checkpoint(*hooks.checkpoint_dir / "last.ckpt", store, meta, hooks.config_digest);
      if (improved) nn::save_checkpoint(*hooks.checkpoint_dir / "best.ckpt", store, meta, hooks.config_digest);
    }
    result.epochs.push_back(e);
    if (hooks.on_epoch) hooks.on_epoch(e);
  }
  if (best) store = std::move(*best);
  return result;
}

template <typename T>
LMTrainResult pretrain(LanguageModel<T>& lm, const std::vector<std::string>& sentences,
                       const std::vector<std::string>& dev_sentences, const Vocabulary& joint,
                       const LMSchedule& schedule, const LMHooks<T>& hooks) {
  if (sentences.empty()) throw ValidationError("pretraining corpus is empty");
  std::vector<std::vector<int>> train, dev;
  for (const auto& s : sentences) train.push_back(build_plain(s, joint));
  for (const auto& s : dev_sentences) dev.push_back(build_plain(s, joint));
  lm.stage = LMStage::Pretrained;
  return train_lm(lm, train, dev, schedule, hooks);
}

template <typename T>
LMTrainResult finetune(LanguageModel<T>& lm, const std::vector<ParallelExample>& train,
                       const std::vector<ParallelExample>& dev, const Vocabulary& joint, const LMSchedule& schedule,
                       const LMHooks<T>& hooks) {
  auto queries = [&](const std::vector<ParallelExample>& xs, const char* part) {
    std::vector<std::vector<int>> out;
    for (std::size_t i = 0; i < xs.size(); ++i) {
      if (!xs[i].label) {
        throw ValidationError(std::string("fine-tuning needs labeled examples; ") + part + " example " +
                              std::to_string(i) + " has no label");
      }
      out.push_back(build_query({xs[i].source, xs[i].target, xs[i].label->name}, joint));
    }
    return out;
  };
  const auto train_q = queries(train, "train");
  const auto dev_q = queries(dev, "dev");
  lm.stage = LMStage::Finetuned;
  return train_lm(lm, train_q, dev_q, schedule, hooks);
}

#define TATRANS_INSTANTIATE_LM(T)                                                                                    \
  template class LanguageModel<T>;                                                                                   \
  template LMScore score(const LanguageModel<T>&, const QueryTriple&, const Vocabulary&);                            \
  template double perplexity(const LanguageModel<T>&, const std::vector<std::vector<int>>&);                        \
  template LMTrainResult train_lm(LanguageModel<T>&, const std::vector<std::vector<int>>&,                          \
                                  const std::vector<std::vector<int>>&, const LMSchedule&, const LMHooks<T>&);      \
  template LMTrainResult pretrain(LanguageModel<T>&, const std::vector<std::string>&, const std::vector<std::string>&, \
                                  const Vocabulary&, const LMSchedule&, const LMHooks<T>&);                         \
  template LMTrainResult finetune(LanguageModel<T>&, const std::vector<ParallelExample>&,                           \
                                  const std::vector<ParallelExample>&, const Vocabulary&, const LMSchedule&,        \
                                  const LMHooks<T>&);

TATRANS_INSTANTIATE_LM(float)
TATRANS_INSTANTIATE_LM(double)

}  // namespace tatrans
