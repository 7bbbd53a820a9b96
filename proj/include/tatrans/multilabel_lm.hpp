#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "tatrans/corpus.hpp"
#include "tatrans/layers.hpp"
#include "tatrans/tokenizer.hpp"

namespace tatrans {

struct LMConfig {
  std::size_t num_layers = 4;
  std::size_t num_heads = 4;
  std::size_t model_dim = 128;
  std::size_t ffn_dim = 512;
  std::size_t context = 128;  // longest scorable sequence, EOS included
  double dropout = 0.0;

  void validate() const;
  nlohmann::json to_json() const;
  static LMConfig from_json(const nlohmann::json& j);
};

struct QueryTriple {
  std::string ancient;
  std::string modern;
  std::string label;
};

/// [zh_a] a.. [zh_m] m.. [chron] <label> EOS
std::vector<int> build_query(const QueryTriple& triple, const Vocabulary& joint);
/// Plain sentence followed by EOS, the pretraining format.
std::vector<int> build_plain(std::string_view text, const Vocabulary& joint);

struct LMScore {
  double total_nll = 0.0;  // natural log
  std::size_t token_count = 0;
  double per_token_nll = 0.0;
};

enum class LMStage { Initialized, Pretrained, Finetuned };
const char* stage_name(LMStage s);
LMStage parse_stage(std::string_view name);

/// Decoder-only Transformer with tied input/output embeddings. A sequence s is
/// read as BOS s[0..n-2] and every s[i] is predicted, so all n tokens are scored.
template <typename T>
class LanguageModel {
 public:
  LanguageModel(const LMConfig& config, std::size_t vocab_size, std::uint64_t seed);

  const LMConfig& config() const { return config_; }
  std::size_t vocab_size() const { return vocab_size_; }
  nn::ParameterStore<T>& params() { return store_; }
  const nn::ParameterStore<T>& params() const { return store_; }
  std::size_t parameter_count() const { return store_.scalar_count(); }

  LMStage stage = LMStage::Initialized;

  /// Logits [batch * padded_len, vocab]. Throws ValidationError for empty or over-length sequences.
  nn::Var logits(nn::Graph<T>& g, const std::vector<std::vector<int>>& seqs, const nn::DropoutCtx& drop = {}) const;
  /// Mean next-token cross-entropy over all predicted tokens.
  nn::Var loss(nn::Graph<T>& g, const std::vector<std::vector<int>>& seqs, const nn::DropoutCtx& drop = {}) const;

  /// Negative log-likelihood of each predicted token, per sequence.
  std::vector<std::vector<double>> token_nll(const std::vector<std::vector<int>>& seqs, std::size_t chunk = 64) const;
  std::vector<LMScore> score_batch(const std::vector<std::vector<int>>& seqs, std::size_t chunk = 64) const;
  LMScore score(const std::vector<int>& seq) const;

 private:
  struct Block {
    nn::NormIds ln1, ln2;
    nn::AttentionIds attn;
    nn::FeedForwardIds ffn;
  };

  LMConfig config_;
  std::size_t vocab_size_;
  nn::ParameterStore<T> store_;
  std::size_t embed_ = 0, pos_ = 0;
  std::vector<Block> blocks_;
  nn::NormIds final_;
};

/// Score of one query triple.
template <typename T>
LMScore score(const LanguageModel<T>& lm, const QueryTriple& triple, const Vocabulary& joint);

/// exp(total NLL / total predicted tokens). Throws ValidationError on an empty dataset.
template <typename T>
double perplexity(const LanguageModel<T>& lm, const std::vector<std::vector<int>>& seqs);

struct LMSchedule {
  std::size_t epochs = 10;
  std::size_t batch = 32;
  double lr = 1e-3;
  std::size_t warmup = 200;
  double clip_norm = 1.0;
  std::uint64_t seed = 1;

  void validate() const;
  nlohmann::json to_json() const;
  static LMSchedule from_json(const nlohmann::json& j);
};

struct LMEpoch {
  std::size_t epoch = 0;
  std::size_t step = 0;
  double train_loss = 0.0;
  std::optional<double> dev_perplexity;
};

struct LMTrainResult {
  std::vector<LMEpoch> epochs;
  std::size_t best_epoch = 0;
  std::optional<double> best_dev_perplexity;
};

template <typename T>
struct LMHooks {
  std::optional<std::filesystem::path> checkpoint_dir;  // last.ckpt per epoch, best.ckpt on improvement
  nlohmann::json checkpoint_metadata;
  std::string config_digest;
  std::function<void(const LMEpoch&)> on_epoch;
};

/// Next-token training over id sequences. With a nonempty dev set the epoch of lowest
/// dev perplexity is restored at the end. DivergenceError leaves the last good step.
template <typename T>
LMTrainResult train_lm(LanguageModel<T>& lm, const std::vector<std::vector<int>>& train,
                       const std::vector<std::vector<int>>& dev, const LMSchedule& schedule,
                       const LMHooks<T>& hooks = {});

/// Pretraining on plain modern sentences.
template <typename T>
LMTrainResult pretrain(LanguageModel<T>& lm, const std::vector<std::string>& sentences,
                       const std::vector<std::string>& dev_sentences, const Vocabulary& joint,
                       const LMSchedule& schedule, const LMHooks<T>& hooks = {});

/// Fine-tuning on query sequences of labeled pairs. Throws ValidationError naming the
/// first unlabeled example.
template <typename T>
LMTrainResult finetune(LanguageModel<T>& lm, const std::vector<ParallelExample>& train,
                       const std::vector<ParallelExample>& dev, const Vocabulary& joint, const LMSchedule& schedule,
                       const LMHooks<T>& hooks = {});

}  // namespace tatrans
