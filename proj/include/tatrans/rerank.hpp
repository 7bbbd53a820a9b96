#pragma once

#include <string>
#include <vector>

#include "tatrans/multilabel_lm.hpp"

namespace tatrans {

struct ScoredCandidate {
  std::string modern;
  std::string label;
  std::size_t label_index = 0;
  std::size_t beam_rank = 0;
  LMScore lm_score;
  bool valid = true;  // false when the query did not fit the LM context
};

enum class RerankCriterion { PerTokenNll, TotalNll };

struct RerankResult {
  ScoredCandidate best;
  std::vector<ScoredCandidate> grid;  // candidate-major, labels in label-set order
};

/// Lowest score among valid cells; ties go to the lower beam rank, then the lower label
/// index. Throws ValidationError when no cell is valid.
const ScoredCandidate& select_best(const std::vector<ScoredCandidate>& grid,
                                   RerankCriterion criterion = RerankCriterion::PerTokenNll);

/// Scores every (candidate, label) pair as a query on the source and picks the best.
template <typename T>
RerankResult rerank(const LanguageModel<T>& lm, const Vocabulary& joint, const std::string& source,
                    const std::vector<std::string>& candidates, const LabelSet& labels,
                    RerankCriterion criterion = RerankCriterion::PerTokenNll);

struct ChronologyResult {
  std::string label;
  std::size_t label_index = 0;
  std::vector<ScoredCandidate> per_label;
};

/// Label whose query with the fixed translation scores lowest.
template <typename T>
ChronologyResult infer_chronology(const LanguageModel<T>& lm, const Vocabulary& joint, const std::string& source,
                                  const std::string& translation, const LabelSet& labels,
                                  RerankCriterion criterion = RerankCriterion::PerTokenNll);

}  // namespace tatrans
