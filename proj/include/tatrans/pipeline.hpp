#pragma once

#include <filesystem>
#include <iosfwd>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "tatrans/evaluation.hpp"
#include "tatrans/multilabel_lm.hpp"
#include "tatrans/rerank.hpp"
#include "tatrans/semi_supervised.hpp"
#include "tatrans/tokenizer.hpp"
#include "tatrans/translation_model.hpp"

namespace tatrans {

struct DecodeConfig {
  std::size_t beam_size = 5;
  std::size_t top_k = 5;
  std::size_t max_len = 64;
};

/// Everything a pipeline run needs. Validated as a whole before any stage runs.
/// Stage seeds are derived from `seed`; the seed fields inside the schedules are
/// overwritten during resolution.
struct RunConfig {
  std::vector<std::string> labels = LabelSet::standard().names();
  std::uint64_t seed = 1;

  std::string parallel_path;  // labeled (optionally partly unlabeled) TSV, split by prep
  std::string mono_a_path;    // optional
  std::string mono_m_path;    // optional
  double dev_frac = 0.1;
  double test_frac = 0.1;
  bool stratify = false;

  std::size_t min_freq = 1;
  bool joint_vocab = false;  // translation model uses the joint vocabulary on both sides

  TransformerConfig mt;
  ObjectiveWeights objective;
  TrainSchedule mt_schedule;
  LMConfig lm;
  LMSchedule pretrain;
  LMSchedule finetune;
  DecodeConfig decode;
  RerankCriterion criterion = RerankCriterion::PerTokenNll;

  std::string work_dir = "work";

  RunConfig();
  void validate() const;
  nlohmann::json to_json() const;
  /// Unknown keys are rejected. Missing keys keep their defaults.
  static RunConfig from_json(const nlohmann::json& j);
  /// Applies "a.b.c=value" to the JSON form (value parsed as JSON, else taken as a string).
  static void apply_override(nlohmann::json& j, const std::string& assignment);
  std::string digest() const;
};

enum class Stage { Prep, TrainMt, TrainLm, FinetuneLm, Translate, Rerank, Evaluate };
const std::vector<Stage>& all_stages();
const char* stage_name(Stage s);
Stage parse_stage_name(std::string_view name);

/// Files of a work directory, relative to its root.
struct WorkLayout {
  std::filesystem::path root;

  std::filesystem::path manifest() const { return root / "manifest.json"; }
  std::filesystem::path train() const { return root / "data/train.tsv"; }
  std::filesystem::path dev() const { return root / "data/dev.tsv"; }
  std::filesystem::path test() const { return root / "data/test.tsv"; }
  std::filesystem::path mono_a() const { return root / "data/mono_a.txt"; }
  std::filesystem::path mono_m() const { return root / "data/mono_m.txt"; }
  std::filesystem::path stats() const { return root / "data/stats.json"; }
  std::filesystem::path src_vocab() const { return root / "vocab/source.vocab"; }
  std::filesystem::path tgt_vocab() const { return root / "vocab/target.vocab"; }
  std::filesystem::path joint_vocab() const { return root / "vocab/joint.vocab"; }
  std::filesystem::path mt_dir() const { return root / "mt"; }
  std::filesystem::path mt_model() const { return root / "mt/model.ckpt"; }
  std::filesystem::path mt_metrics() const { return root / "mt/metrics.csv"; }
  std::filesystem::path lm_dir() const { return root / "lm"; }
  std::filesystem::path lm_pretrained() const { return root / "lm/pretrained.ckpt"; }
  std::filesystem::path lm_finetuned() const { return root / "lm/finetuned.ckpt"; }
  std::filesystem::path nbest() const { return root / "out/test.nbest.tsv"; }
  std::filesystem::path top1() const { return root / "out/test.top1.txt"; }
  std::filesystem::path reranked() const { return root / "out/test.rerank.tsv"; }
  std::filesystem::path grid() const { return root / "out/test.grid.tsv"; }
  std::filesystem::path chronology_reference() const { return root / "out/test.chronology_reference.tsv"; }
  std::filesystem::path report_dir() const { return root / "report"; }
};

// --- self-contained model files ---

struct MtArtifact {
  Vocabulary source;
  Vocabulary target;
  std::unique_ptr<TranslationModel<float>> model;
};

nlohmann::json mt_metadata(const TransformerConfig& config, const Vocabulary& source, const Vocabulary& target);
void save_mt(const std::filesystem::path& path, const TranslationModel<float>& model, const Vocabulary& source,
             const Vocabulary& target, const std::string& config_digest);
MtArtifact load_mt(const std::filesystem::path& path);

struct LmArtifact {
  Vocabulary joint;
  std::unique_ptr<LanguageModel<float>> model;
};

nlohmann::json lm_metadata(const LMConfig& config, const Vocabulary& joint, LMStage stage);
void save_lm(const std::filesystem::path& path, const LanguageModel<float>& model, const Vocabulary& joint,
             const std::string& config_digest);
LmArtifact load_lm(const std::filesystem::path& path);

// --- n-best and rerank files ---

struct NBestEntry {
  std::size_t index = 0;  // sentence index in the input
  std::string source;
  std::size_t rank = 0;
  double score = 0.0;     // length-normalized
  double log_prob = 0.0;
  std::string candidate;
};

/// TSV: index, source, rank, score, log_prob, candidate.
std::string format_nbest(const std::vector<NBestEntry>& entries);
std::vector<NBestEntry> parse_nbest(std::string_view text);

/// Beam search over every source; candidates are decoded text without EOS.
std::vector<NBestEntry> translate_nbest(const MtArtifact& mt, const std::vector<std::string>& sources,
                                        const DecodeConfig& decode);

struct PipelineOptions {
  std::ostream* log = nullptr;
};

/// Runs the given stages in canonical order. A stage whose inputs are missing throws
/// ValidationError naming the stage that produces them.
void run_pipeline(const RunConfig& config, const std::set<Stage>& stages, const PipelineOptions& options = {});

/// Fixed-point text for numbers written to TSV outputs.
std::string format_double(double v);

}  // namespace tatrans
