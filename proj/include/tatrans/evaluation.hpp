#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "tatrans/corpus.hpp"

namespace tatrans {

struct LabelBleu {
  std::string label;
  double bleu = 0.0;
  std::size_t sentences = 0;
  std::size_t hyp_chars = 0;
  std::size_t ref_chars = 0;

  friend bool operator==(const LabelBleu&, const LabelBleu&) = default;
};

struct BleuReport {
  double bleu = 0.0;                       // in [0, 1]
  std::array<double, 4> precisions{};      // after smoothing
  std::array<std::size_t, 4> matches{};    // clipped n-gram matches
  std::array<std::size_t, 4> totals{};     // hypothesis n-grams
  double brevity_penalty = 1.0;
  std::size_t hyp_chars = 0;
  std::size_t ref_chars = 0;
  std::size_t sentences = 0;
  std::vector<LabelBleu> per_label;        // label-set order; empty when no labels were given

  friend bool operator==(const BleuReport&, const BleuReport&) = default;
};

/// Corpus BLEU over character 1..4-grams with clipped counts and brevity penalty.
/// For n >= 2 a zero match count becomes 1 / (2 * hypothesis n-gram count); an order
/// where the hypotheses have no n-grams scores 1 if the references have none either.
/// `labels`, when nonempty, holds one label name per example ("" for unlabeled, which
/// is left out of every per-label subset).
BleuReport bleu(const std::vector<std::string>& hypotheses, const std::vector<std::string>& references,
                const std::vector<std::string>& labels = {}, const LabelSet* label_set = nullptr);

struct LabelMetrics {
  std::string label;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t support = 0;

  friend bool operator==(const LabelMetrics&, const LabelMetrics&) = default;
};

struct AveragedMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;

  friend bool operator==(const AveragedMetrics&, const AveragedMetrics&) = default;
};

struct ClassificationReport {
  std::vector<LabelMetrics> per_label;
  double accuracy = 0.0;
  AveragedMetrics macro;
  AveragedMetrics weighted;
  std::vector<std::vector<std::size_t>> confusion;  // rows gold, columns predicted
  std::size_t total = 0;

  friend bool operator==(const ClassificationReport&, const ClassificationReport&) = default;
};

/// Zero denominators give 0 for precision, recall and F1.
ClassificationReport classification_metrics(const std::vector<std::string>& gold,
                                            const std::vector<std::string>& predicted, const LabelSet& labels);

/// Named BLEU and classification results that are written together.
struct EvaluationReport {
  std::vector<std::pair<std::string, BleuReport>> bleu;
  std::vector<std::pair<std::string, ClassificationReport>> classification;

  friend bool operator==(const EvaluationReport&, const EvaluationReport&) = default;
};

nlohmann::json to_json(const BleuReport& r);
nlohmann::json to_json(const ClassificationReport& r);
nlohmann::json to_json(const EvaluationReport& r);
BleuReport bleu_report_from_json(const nlohmann::json& j);
ClassificationReport classification_report_from_json(const nlohmann::json& j);
EvaluationReport evaluation_report_from_json(const nlohmann::json& j);

/// Human-readable tables; BLEU shown on the x100 scale.
std::string format_text(const EvaluationReport& r);
/// gold\predicted header row, then one row per gold label.
std::string confusion_csv(const ClassificationReport& r);

/// Writes report.txt, report.json and confusion_<name>.csv per classification into `dir`.
/// Returns the written paths.
std::vector<std::filesystem::path> write_reports(const EvaluationReport& r, const std::filesystem::path& dir);

}  // namespace tatrans
