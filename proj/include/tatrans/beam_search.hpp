#pragma once

#include <cstddef>
#include <vector>

namespace tatrans {

/// Source of next-token log-probabilities for a set of prefixes of equal length.
class StepScorer {
 public:
  virtual ~StepScorer() = default;
  /// One row of vocab-sized log-probabilities per prefix.
  virtual std::vector<std::vector<double>> next_log_probs(const std::vector<std::vector<int>>& prefixes) = 0;
};

struct BeamHypothesis {
  std::vector<int> tokens;  // generated tokens, including the final EOS if one was produced
  double log_prob = 0.0;    // sum of per-step token log-probabilities
  bool finished = false;

  /// Length-normalized score used for ranking.
  double score() const { return tokens.empty() ? log_prob : log_prob / static_cast<double>(tokens.size()); }
};

struct BeamOptions {
  std::size_t beam_size = 5;
  std::size_t top_k = 5;
  std::size_t max_len = 64;  // maximum generated tokens, EOS included
  int eos = 2;
};

/// Beam search. Within a step candidates are ranked by cumulative log-probability,
/// exact ties going to the earlier parent and then the lower token id. A candidate
/// ending in EOS is kept if it ranks within the first beam_size; everything alive
/// at max_len is finished there. Stops once beam_size hypotheses are finished.
/// Returns up to top_k finished hypotheses by descending length-normalized score.
std::vector<BeamHypothesis> beam_search(StepScorer& scorer, const BeamOptions& options);

/// Argmax at every step (lower id on ties) until EOS or max_len.
BeamHypothesis greedy_search(StepScorer& scorer, int eos, std::size_t max_len);

}  // namespace tatrans
