#include "tatrans/rerank.hpp"

#include "tatrans/error.hpp"

namespace tatrans {

const ScoredCandidate& select_best(const std::vector<ScoredCandidate>& grid, RerankCriterion criterion) {
  const ScoredCandidate* best = nullptr;
  auto key = [criterion](const ScoredCandidate& c) {
    return criterion == RerankCriterion::PerTokenNll ? c.lm_score.per_token_nll : c.lm_score.total_nll;
  };
  for (const auto& c : grid) {
    if (!c.valid) continue;
    if (!best || key(c) < key(*best) ||
        (key(c) == key(*best) &&
         (c.beam_rank < best->beam_rank || (c.beam_rank == best->beam_rank && c.label_index < best->label_index)))) {
      best = &c;
    }
  }
  if (!best) throw ValidationError("rerank: every candidate/label query exceeds the language-model context");
  return *best;
}

template <typename T>
RerankResult rerank(const LanguageModel<T>& lm, const Vocabulary& joint, const std::string& source,
                    const std::vector<std::string>& candidates, const LabelSet& labels, RerankCriterion criterion) {
  if (candidates.empty()) throw ValidationError("rerank: empty candidate list");
  RerankResult out;
  std::vector<std::vector<int>> queries;
  std::vector<std::size_t> cells;
  for (std::size_t r = 0; r < candidates.size(); ++r) {
    for (std::size_t l = 0; l < labels.size(); ++l) {
      ScoredCandidate c;
      c.modern = candidates[r];
      c.label = labels.names()[l];
      c.label_index = l;
      c.beam_rank = r;
      auto q = build_query({source, candidates[r], c.label}, joint);
      c.valid = q.size() <= lm.config().context;
      if (c.valid) {
        queries.push_back(std::move(q));
        cells.push_back(out.grid.size());
      }
      out.grid.push_back(std::move(c));
    }
  }
  if (!queries.empty()) {
    const auto scores = lm.score_batch(queries);
    for (std::size_t i = 0; i < cells.size(); ++i) out.grid[cells[i]].lm_score = scores[i];
  }
  out.best = select_best(out.grid, criterion);
  return out;
}

template <typename T>
ChronologyResult infer_chronology(const LanguageModel<T>& lm, const Vocabulary& joint, const std::string& source,
                                  const std::string& translation, const LabelSet& labels, RerankCriterion criterion) {
  auto r = rerank(lm, joint, source, {translation}, labels, criterion);
  return {r.best.label, r.best.label_index, std::move(r.grid)};
}

template RerankResult rerank(const LanguageModel<float>&, const Vocabulary&, const std::string&,
                             const std::vector<std::string>&, const LabelSet&, RerankCriterion);
template RerankResult rerank(const LanguageModel<double>&, const Vocabulary&, const std::string&,
                             const std::vector<std::string>&, const LabelSet&, RerankCriterion);
template ChronologyResult infer_chronology(const LanguageModel<float>&, const Vocabulary&, const std::string&,
                                           const std::string&, const LabelSet&, RerankCriterion);
template ChronologyResult infer_chronology(const LanguageModel<double>&, const Vocabulary&, const std::string&,
                                           const std::string&, const LabelSet&, RerankCriterion);

}  // namespace tatrans
