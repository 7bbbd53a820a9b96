#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "tatrans/translation_model.hpp"

namespace tatrans {

struct ObjectiveWeights {
  double w_sup = 1.0;
  double w_lm_a = 1.0;
  double w_lm_m = 1.0;

  void validate() const;
  nlohmann::json to_json() const;
  static ObjectiveWeights from_json(const nlohmann::json& j);
};

enum class Stream { Parallel = 0, Ancient = 1, Modern = 2 };
const char* stream_name(Stream s);

struct TrainSchedule {
  std::size_t epochs = 20;  // one epoch is one pass over the parallel batches
  std::size_t batch_p = 32;
  std::size_t batch_a = 32;
  std::size_t batch_m = 32;
  // Relative sampling weight per stream (P, A, M). Empty means proportional to corpus sizes.
  std::vector<double> proportions;
  std::size_t max_non_parallel_run = 3;  // P is forced after this many consecutive other steps
  double lr = 1e-3;
  std::size_t warmup = 400;
  double clip_norm = 1.0;
  bool backward_supervised = false;  // also train m->a on P
  std::size_t dev_decode_len = 64;
  std::uint64_t seed = 1;

  void validate() const;
  nlohmann::json to_json() const;
  static TrainSchedule from_json(const nlohmann::json& j);
};

struct TrainData {
  std::vector<TokenPair> parallel;
  std::vector<std::vector<int>> mono_a;  // ancient token ids (source vocabulary)
  std::vector<std::vector<int>> mono_m;  // modern token ids (target vocabulary)
};

/// Components of one optimizer step; components of streams not run this step are 0.
struct StepRecord {
  std::size_t step = 0;
  Stream stream = Stream::Parallel;
  double l_sup = 0.0;
  double l_lm_a = 0.0;
  double l_lm_m = 0.0;
  double total = 0.0;
};

/// Per-epoch means of each component over the steps that ran it.
struct EpochMetrics {
  std::size_t epoch = 0;
  std::size_t step = 0;  // optimizer steps completed at epoch end
  double l_sup = 0.0;
  double l_lm_a = 0.0;
  double l_lm_m = 0.0;
  double total = 0.0;
  std::optional<double> dev_bleu;
};

struct TrainResult {
  std::vector<EpochMetrics> epochs;
  std::vector<StepRecord> steps;
  std::size_t best_epoch = 0;
  std::optional<double> best_dev_bleu;
};

template <typename T>
struct TrainHooks {
  /// Dev BLEU of the current model; the best epoch by this value is restored at the end.
  /// Without it the final epoch is kept.
  std::function<double(const TranslationModel<T>&)> dev_bleu;
  /// When set, <dir>/last.ckpt is written every epoch and <dir>/best.ckpt on improvement.
  std::optional<std::filesystem::path> checkpoint_dir;
  nlohmann::json checkpoint_metadata;
  std::string config_digest;
  std::function<void(const EpochMetrics&)> on_epoch;
};

template <typename T>
nn::Var supervised_loss(nn::Graph<T>& g, const TranslationModel<T>& model, std::span<const TokenPair> batch,
                        const nn::DropoutCtx& drop = {});
/// Modern-side language-model loss: forward decoder over a sentinel context.
template <typename T>
nn::Var lm_loss_target(nn::Graph<T>& g, const TranslationModel<T>& model, const std::vector<std::vector<int>>& batch,
                       const nn::DropoutCtx& drop = {});
/// Ancient-side language-model loss: backward decoder over a sentinel context.
template <typename T>
nn::Var lm_loss_source(nn::Graph<T>& g, const TranslationModel<T>& model, const std::vector<std::vector<int>>& batch,
                       const nn::DropoutCtx& drop = {});

/// Optimizes w_sup*L_sup(P) + w_lm_a*L_lm(A) + w_lm_m*L_lm(M), one stream per step.
/// A stream takes part only if it is nonempty and its weight is positive. Throws
/// DivergenceError on a non-finite loss or gradient; the parameters are left at the
/// last good step and the last epoch checkpoint on disk is untouched.
template <typename T>
TrainResult train(TranslationModel<T>& model, const TrainData& data, const ObjectiveWeights& weights,
                  const TrainSchedule& schedule, const TrainHooks<T>& hooks = {});

/// CSV with header epoch,step,L_sup,L_lm_A,L_lm_M,total,dev_BLEU.
std::string metrics_csv(const std::vector<EpochMetrics>& epochs);

}  // namespace tatrans
