#include "tatrans/semi_supervised.hpp"

#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "tatrans/checkpoint.hpp"
#include "tatrans/error.hpp"

namespace tatrans {

namespace {

void check_weight(double w, const char* name) {
  if (!std::isfinite(w) || w < 0.0) throw ValidationError(std::string("objective weight ") + name + " must be finite and >= 0");
}

template <typename J, typename V>
void read_into(const J& j, const char* key, V& out) {
  if (j.contains(key)) out = j.at(key).template get<V>();
}

// Cycles through a shuffled index order; reshuffles at every wrap.
class Batcher {
 public:
  Batcher(std::size_t n, std::size_t batch, std::uint64_t seed) : order_(n), batch_(batch), rng_(seed) {
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    reshuffle();
  }

  std::vector<std::size_t> next() {
    if (pos_ >= order_.size()) reshuffle();
    const std::size_t end = std::min(order_.size(), pos_ + batch_);
    std::vector<std::size_t> out(order_.begin() + static_cast<std::ptrdiff_t>(pos_),
                                 order_.begin() + static_cast<std::ptrdiff_t>(end));
    pos_ = end;
    return out;
  }

  bool pass_complete() const { return pos_ >= order_.size(); }
  std::size_t batches_per_pass() const { return (order_.size() + batch_ - 1) / batch_; }

 private:
  void reshuffle() {
    rng_.shuffle(std::span<std::size_t>(order_));
    pos_ = 0;
  }

  std::vector<std::size_t> order_;
  std::size_t batch_;
  std::size_t pos_ = 0;
  Rng rng_;
};

template <typename T>
double checked_value(const nn::Graph<T>& g, nn::Var v, const char* what) {
  const double x = static_cast<double>(g.value(v).item());
  if (!std::isfinite(x)) throw DivergenceError(what, std::string("non-finite ") + what + " loss");
  return x;
}

}  // namespace

const char* stream_name(Stream s) {
  switch (s) {
    case Stream::Parallel: return "P";
    case Stream::Ancient: return "A";
    case Stream::Modern: return "M";
  }
  return "?";
}

void ObjectiveWeights::validate() const {
  check_weight(w_sup, "w_sup");
  check_weight(w_lm_a, "w_lm_a");
  check_weight(w_lm_m, "w_lm_m");
}

nlohmann::json ObjectiveWeights::to_json() const { return {{"w_sup", w_sup}, {"w_lm_a", w_lm_a}, {"w_lm_m", w_lm_m}}; }

ObjectiveWeights ObjectiveWeights::from_json(const nlohmann::json& j) {
  ObjectiveWeights w;
  try {
    read_into(j, "w_sup", w.w_sup);
    read_into(j, "w_lm_a", w.w_lm_a);
    read_into(j, "w_lm_m", w.w_lm_m);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("invalid objective weights: ") + e.what());
  }
  w.validate();
  return w;
}

void TrainSchedule::validate() const {
  if (batch_p == 0 || batch_a == 0 || batch_m == 0) throw ValidationError("train schedule: batch sizes must be positive");
  if (!proportions.empty()) {
    if (proportions.size() != 3) throw ValidationError("train schedule: proportions needs three entries (P, A, M)");
    for (double p : proportions) {
      if (!std::isfinite(p) || p < 0.0) throw ValidationError("train schedule: proportions must be finite and >= 0");
    }
  }
  if (!(lr > 0.0) || !std::isfinite(lr)) throw ValidationError("train schedule: lr must be positive");
  if (!(clip_norm > 0.0)) throw ValidationError("train schedule: clip_norm must be positive");
}

nlohmann::json TrainSchedule::to_json() const {
  return {{"epochs", epochs},
          {"batch_p", batch_p},
          {"batch_a", batch_a},
          {"batch_m", batch_m},
          {"proportions", proportions},
          {"max_non_parallel_run", max_non_parallel_run},
          {"lr", lr},
          {"warmup", warmup},
          {"clip_norm", clip_norm},
          {"backward_supervised", backward_supervised},
          {"dev_decode_len", dev_decode_len},
          {"seed", seed}};
}

TrainSchedule TrainSchedule::from_json(const nlohmann::json& j) {
  TrainSchedule s;
  try {
    read_into(j, "epochs", s.epochs);
    read_into(j, "batch_p", s.batch_p);
    read_into(j, "batch_a", s.batch_a);
    read_into(j, "batch_m", s.batch_m);
    read_into(j, "proportions", s.proportions);
    read_into(j, "max_non_parallel_run", s.max_non_parallel_run);
    read_into(j, "lr", s.lr);
    read_into(j, "warmup", s.warmup);
    read_into(j, "clip_norm", s.clip_norm);
    read_into(j, "backward_supervised", s.backward_supervised);
    read_into(j, "dev_decode_len", s.dev_decode_len);
    read_into(j, "seed", s.seed);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("invalid train schedule: ") + e.what());
  }
  s.validate();
  return s;
}

template <typename T>
nn::Var supervised_loss(nn::Graph<T>& g, const TranslationModel<T>& model, std::span<const TokenPair> batch,
                        const nn::DropoutCtx& drop) {
  return model.forward_loss(g, batch, Direction::Forward, drop);
}

template <typename T>
nn::Var lm_loss_target(nn::Graph<T>& g, const TranslationModel<T>& model, const std::vector<std::vector<int>>& batch,
                       const nn::DropoutCtx& drop) {
  return model.lm_loss(g, batch, Direction::Forward, drop);
}

template <typename T>
nn::Var lm_loss_source(nn::Graph<T>& g, const TranslationModel<T>& model, const std::vector<std::vector<int>>& batch,
                       const nn::DropoutCtx& drop) {
  return model.lm_loss(g, batch, Direction::Backward, drop);
}

template <typename T>
TrainResult train(TranslationModel<T>& model, const TrainData& data, const ObjectiveWeights& weights,
                  const TrainSchedule& schedule, const TrainHooks<T>& hooks) {
  weights.validate();
  schedule.validate();
  if (data.parallel.empty()) throw ValidationError("training needs a nonempty parallel corpus");

  const std::size_t sizes[3] = {data.parallel.size(), data.mono_a.size(), data.mono_m.size()};
  const double stream_weight[3] = {weights.w_sup, weights.w_lm_a, weights.w_lm_m};
  std::vector<Stream> active;
  std::vector<double> mix;
  for (int s = 0; s < 3; ++s) {
    const double prop = schedule.proportions.empty() ? static_cast<double>(sizes[s]) : schedule.proportions[s];
    if (sizes[s] > 0 && stream_weight[s] > 0.0 && prop > 0.0) {
      active.push_back(static_cast<Stream>(s));
      mix.push_back(prop);
    }
  }
  if (active.empty()) throw ValidationError("no active training stream: every stream is empty or has zero weight");
  const bool parallel_active = active.front() == Stream::Parallel;
  const double mix_total = std::accumulate(mix.begin(), mix.end(), 0.0);

  const std::uint64_t seed = schedule.seed;
  Batcher p_batches(sizes[0], schedule.batch_p, Rng::derive(seed, 11));
  Batcher a_batches(std::max<std::size_t>(sizes[1], 1), schedule.batch_a, Rng::derive(seed, 12));
  Batcher m_batches(std::max<std::size_t>(sizes[2], 1), schedule.batch_m, Rng::derive(seed, 13));
  Rng mix_rng(Rng::derive(seed, 14));
  Rng drop_rng(Rng::derive(seed, 15));
  const nn::DropoutCtx drop{model.config().dropout, &drop_rng};

  auto& store = model.params();
  std::optional<nn::ParameterStore<T>> best_store;
  TrainResult result;
  std::size_t non_parallel_run = 0;
  std::size_t step = 0;

  auto pick_stream = [&]() {
    if (active.size() == 1) return active.front();
    if (parallel_active && non_parallel_run >= schedule.max_non_parallel_run) return Stream::Parallel;
    const double u = mix_rng.uniform() * mix_total;
    double acc = 0.0;
    for (std::size_t i = 0; i < active.size(); ++i) {
      acc += mix[i];
      if (u < acc) return active[i];
    }
    return active.back();
  };

  for (std::size_t epoch = 1; epoch <= schedule.epochs; ++epoch) {
    double sums[4] = {0, 0, 0, 0};
    std::size_t counts[3] = {0, 0, 0};
    std::size_t epoch_steps = 0;
    const std::size_t fallback_steps = p_batches.batches_per_pass();
    bool epoch_done = false;
    while (!epoch_done) {
      const Stream stream = pick_stream();
      StepRecord rec;
      rec.step = ++step;
      rec.stream = stream;
      nn::Graph<T> g(store);
      nn::Var total;
      if (stream == Stream::Parallel) {
        std::vector<TokenPair> batch;
        for (std::size_t i : p_batches.next()) batch.push_back(data.parallel[i]);
        nn::Var loss = supervised_loss(g, model, std::span<const TokenPair>(batch), drop);
        if (schedule.backward_supervised) {
          std::vector<TokenPair> flipped;
          for (const auto& p : batch) flipped.push_back({p.target, p.source});
          loss = nn::add(g, loss, model.forward_loss(g, flipped, Direction::Backward, drop));
        }
        rec.l_sup = checked_value(g, loss, "supervised");
        total = nn::scale(g, loss, weights.w_sup);
        non_parallel_run = 0;
        epoch_done = p_batches.pass_complete();
      } else {
        const bool anc = stream == Stream::Ancient;
        std::vector<std::vector<int>> batch;
        for (std::size_t i : (anc ? a_batches : m_batches).next()) batch.push_back((anc ? data.mono_a : data.mono_m)[i]);
        const nn::Var loss = anc ? lm_loss_source(g, model, batch, drop) : lm_loss_target(g, model, batch, drop);
        (anc ? rec.l_lm_a : rec.l_lm_m) = checked_value(g, loss, anc ? "ancient language-model" : "modern language-model");
        total = nn::scale(g, loss, anc ? weights.w_lm_a : weights.w_lm_m);
        ++non_parallel_run;
      }
      if (!parallel_active && ++epoch_steps >= fallback_steps) epoch_done = true;
      rec.total = checked_value(g, total, "total");
      g.backward(total);
      nn::clip_grad_norm(store, schedule.clip_norm);
      nn::adam_step(store, nn::warmup_inverse_sqrt(store.step_count + 1, schedule.lr, schedule.warmup));

      const auto s = static_cast<std::size_t>(stream);
      sums[s] += s == 0 ? rec.l_sup : (s == 1 ? rec.l_lm_a : rec.l_lm_m);
      ++counts[s];
      sums[3] += rec.total;
      result.steps.push_back(rec);
    }

    EpochMetrics m;
    m.epoch = epoch;
    m.step = step;
    m.l_sup = counts[0] ? sums[0] / static_cast<double>(counts[0]) : 0.0;
    m.l_lm_a = counts[1] ? sums[1] / static_cast<double>(counts[1]) : 0.0;
    m.l_lm_m = counts[2] ? sums[2] / static_cast<double>(counts[2]) : 0.0;
    const std::size_t n_steps = counts[0] + counts[1] + counts[2];
    m.total = n_steps ? sums[3] / static_cast<double>(n_steps) : 0.0;
    bool improved = true;
    if (hooks.dev_bleu) {
      m.dev_bleu = hooks.dev_bleu(model);
      improved = !result.best_dev_bleu || *m.dev_bleu > *result.best_dev_bleu;
      if (improved) {
        result.best_dev_bleu = m.dev_bleu;
        best_store = store;
      }
    }
    if (improved) result.best_epoch = epoch;
    if (hooks.checkpoint_dir) {
      nlohmann::json meta = hooks.checkpoint_metadata;
      meta["epoch"] = epoch;
      nn::save_checkpoint(*hooks.checkpoint_dir / "last.ckpt", store, meta, hooks.config_digest);
      if (improved) nn::save_checkpoint(*hooks.checkpoint_dir / "best.ckpt", store, meta, hooks.config_digest);
    }
    result.epochs.push_back(m);
    if (hooks.on_epoch) hooks.on_epoch(m);
  }
  if (best_store) store = std::move(*best_store);
  return result;
}

std::string metrics_csv(const std::vector<EpochMetrics>& epochs) {
  std::ostringstream out;
  out << "epoch,step,L_sup,L_lm_A,L_lm_M,total,dev_BLEU\n";
  char buf[256];
  for (const auto& m : epochs) {
    std::snprintf(buf, sizeof buf, "%zu,%zu,%.6f,%.6f,%.6f,%.6f,", m.epoch, m.step, m.l_sup, m.l_lm_a, m.l_lm_m, m.total);
    out << buf;
    if (m.dev_bleu) {
      std::snprintf(buf, sizeof buf, "%.6f", *m.dev_bleu);
      out << buf;
    }
    out << '\n';
  }
  return out.str();
}

#define TATRANS_INSTANTIATE_TRAINER(T)                                                                                 \
  template nn::Var supervised_loss(nn::Graph<T>&, const TranslationModel<T>&, std::span<const TokenPair>,             \
                                   const nn::DropoutCtx&);                                                            \
  template nn::Var lm_loss_target(nn::Graph<T>&, const TranslationModel<T>&, const std::vector<std::vector<int>>&,    \
                                  const nn::DropoutCtx&);                                                             \
  template nn::Var lm_loss_source(nn::Graph<T>&, const TranslationModel<T>&, const std::vector<std::vector<int>>&,    \
                                  const nn::DropoutCtx&);                                                             \
  template TrainResult train(TranslationModel<T>&, const TrainData&, const ObjectiveWeights&, const TrainSchedule&,   \
                             const TrainHooks<T>&);

TATRANS_INSTANTIATE_TRAINER(float)
TATRANS_INSTANTIATE_TRAINER(double)

}  // namespace tatrans
