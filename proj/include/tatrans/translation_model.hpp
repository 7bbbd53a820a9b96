#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "json.hpp"
#include "tatrans/beam_search.hpp"
#include "tatrans/layers.hpp"

namespace tatrans {

struct TransformerConfig {
  std::size_t num_layers = 2;
  std::size_t num_heads = 4;
  std::size_t model_dim = 64;
  std::size_t ffn_dim = 256;
  std::size_t max_len = 64;
  double dropout = 0.0;
  bool share_decoder_embeddings = false;  // tie target embedding and output projection

  /// Throws ValidationError naming the offending field.
  void validate() const;
  nlohmann::json to_json() const;
  static TransformerConfig from_json(const nlohmann::json& j);
};

/// Forward generates modern text from ancient input; Backward swaps the roles
/// and exists for the ancient-side language-model loss.
enum class Direction { Forward, Backward };

/// Source sentence ids and target sentence ids, both unframed.
struct TokenPair {
  std::vector<int> source;
  std::vector<int> target;
};

/// Encoder output for a padded batch.
struct EncoderState {
  nn::Var memory;                    // [batch * length, model_dim]
  std::size_t batch = 0;
  std::size_t length = 0;            // padded source length
  std::vector<std::size_t> lengths;  // valid positions per sentence; keys past these are masked
};

/// Encoder-decoder Transformer (pre-norm). One encoder stack and one decoder
/// stack serve both directions; each direction brings its own embedding tables
/// and output projection. A learned sentinel vector stands in for the encoder
/// output when the decoder is trained as a plain language model.
template <typename T>
class TranslationModel {
 public:
  TranslationModel(const TransformerConfig& config, std::size_t src_vocab, std::size_t tgt_vocab, std::uint64_t seed);

  const TransformerConfig& config() const { return config_; }
  std::size_t src_vocab_size() const { return src_vocab_; }
  std::size_t tgt_vocab_size() const { return tgt_vocab_; }
  std::size_t output_vocab(Direction dir) const { return dir == Direction::Forward ? tgt_vocab_ : src_vocab_; }

  nn::ParameterStore<T>& params() { return store_; }
  const nn::ParameterStore<T>& params() const { return store_; }
  std::size_t parameter_count() const { return store_.scalar_count(); }

  /// Throws ValidationError for sentences longer than max_len or empty ones.
  EncoderState encode(nn::Graph<T>& g, const std::vector<std::vector<int>>& sources,
                      Direction dir = Direction::Forward, const nn::DropoutCtx& drop = {}) const;
  /// One sentinel position per sentence.
  EncoderState null_context(nn::Graph<T>& g, std::size_t batch) const;

  /// Logits [batch * padded_len, output_vocab] for already framed decoder inputs.
  nn::Var decode(nn::Graph<T>& g, const EncoderState& memory, const std::vector<std::vector<int>>& inputs,
                 Direction dir = Direction::Forward, const nn::DropoutCtx& drop = {}) const;

  /// Mean per-token cross-entropy of the targets (EOS included) given the sources.
  nn::Var forward_loss(nn::Graph<T>& g, std::span<const TokenPair> batch, Direction dir = Direction::Forward,
                       const nn::DropoutCtx& drop = {}) const;

  /// Mean per-token cross-entropy of the sentences decoded from the sentinel context.
  nn::Var lm_loss(nn::Graph<T>& g, const std::vector<std::vector<int>>& sentences, Direction dir,
                  const nn::DropoutCtx& drop = {}) const;

  /// Ids of named parameter groups, for tests that need to address them.
  std::size_t target_embedding_id() const { return tgt_embed_; }
  std::optional<std::size_t> target_output_id() const { return tgt_out_; }
  std::size_t null_context_id() const { return null_ctx_; }

 private:
  struct EncoderLayer {
    nn::NormIds ln1, ln2;
    nn::AttentionIds self_attn;
    nn::FeedForwardIds ffn;
  };
  struct DecoderLayer {
    nn::NormIds ln1, ln2, ln3;
    nn::AttentionIds self_attn, cross_attn;
    nn::FeedForwardIds ffn;
  };

  std::size_t input_embedding(Direction dir, bool encoder_side) const;
  nn::Var output_logits(nn::Graph<T>& g, nn::Var hidden, Direction dir) const;
  void check_length(std::size_t len, const char* what) const;

  TransformerConfig config_;
  std::size_t src_vocab_;
  std::size_t tgt_vocab_;
  nn::ParameterStore<T> store_;

  std::size_t src_embed_ = 0, tgt_embed_ = 0, enc_pos_ = 0, dec_pos_ = 0, null_ctx_ = 0;
  std::optional<std::size_t> tgt_out_;  // absent when tied to tgt_embed_
  std::size_t src_out_ = 0;             // backward-direction output projection
  std::vector<EncoderLayer> encoder_;
  std::vector<DecoderLayer> decoder_;
  nn::NormIds enc_final_, dec_final_;
};

/// Next-token log-probabilities for prefixes of one source sentence, used by beam search.
template <typename T>
class TranslationScorer : public StepScorer {
 public:
  TranslationScorer(const TranslationModel<T>& model, const std::vector<int>& source);
  std::vector<std::vector<double>> next_log_probs(const std::vector<std::vector<int>>& prefixes) override;

 private:
  const TranslationModel<T>& model_;
  nn::Tensor<T> memory_;  // [source_len, model_dim]
  std::size_t source_len_;
};

/// Beam search over one source. An empty source yields a single EOS-only hypothesis.
template <typename T>
std::vector<BeamHypothesis> translate_beam(const TranslationModel<T>& model, const std::vector<int>& source,
                                           const BeamOptions& options);

/// Batched greedy decoding, argmax with lower-id ties. Output excludes EOS.
template <typename T>
std::vector<std::vector<int>> greedy_translate(const TranslationModel<T>& model,
                                               const std::vector<std::vector<int>>& sources, std::size_t max_len,
                                               std::size_t chunk = 64);

/// Frame as decoder input (BOS + target) and labels (target + EOS).
std::vector<int> decoder_input(const std::vector<int>& target);
std::vector<int> decoder_labels(const std::vector<int>& target);

}  // namespace tatrans
