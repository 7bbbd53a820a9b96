#include "tatrans/beam_search.hpp"

#include <algorithm>

#include "tatrans/error.hpp"

namespace tatrans {

namespace {

struct Candidate {
  double log_prob;
  std::size_t parent;
  int token;
};

bool better(const Candidate& a, const Candidate& b) {
  if (a.log_prob != b.log_prob) return a.log_prob > b.log_prob;
  if (a.parent != b.parent) return a.parent < b.parent;
  return a.token < b.token;
}

}  // namespace

std::vector<BeamHypothesis> beam_search(StepScorer& scorer, const BeamOptions& options) {
  if (options.top_k < 1 || options.beam_size < options.top_k) {
    throw ValidationError("beam search needs beam_size >= top_k >= 1 (got beam " + std::to_string(options.beam_size) +
                          ", top_k " + std::to_string(options.top_k) + ")");
  }
  if (options.max_len == 0) throw ValidationError("beam search max_len must be positive");

  std::vector<BeamHypothesis> live{BeamHypothesis{}};
  std::vector<BeamHypothesis> finished;
  for (std::size_t step = 0; step < options.max_len && !live.empty(); ++step) {
    std::vector<std::vector<int>> prefixes;
    prefixes.reserve(live.size());
    for (const auto& h : live) prefixes.push_back(h.tokens);
    const auto log_probs = scorer.next_log_probs(prefixes);
    if (log_probs.size() != live.size()) throw RuntimeError("step scorer returned the wrong number of rows");

    std::vector<Candidate> cands;
    for (std::size_t i = 0; i < live.size(); ++i) {
      for (std::size_t w = 0; w < log_probs[i].size(); ++w) {
        cands.push_back({live[i].log_prob + log_probs[i][w], i, static_cast<int>(w)});
      }
    }
    std::sort(cands.begin(), cands.end(), better);

    const bool last = step + 1 == options.max_len;
    std::vector<BeamHypothesis> next;
    for (std::size_t rank = 0; rank < cands.size(); ++rank) {
      const auto& c = cands[rank];
      const bool ends = c.token == options.eos || last;
      if (ends && rank >= options.beam_size) continue;
      if (!ends && next.size() >= options.beam_size) continue;
      BeamHypothesis h{live[c.parent].tokens, c.log_prob, ends};
      h.tokens.push_back(c.token);
      (ends ? finished : next).push_back(std::move(h));
      if (next.size() >= options.beam_size && rank + 1 >= options.beam_size) break;
    }
    live = std::move(next);
    if (finished.size() >= options.beam_size) break;
  }

  std::stable_sort(finished.begin(), finished.end(), [](const BeamHypothesis& a, const BeamHypothesis& b) {
    if (a.score() != b.score()) return a.score() > b.score();
    return a.tokens < b.tokens;
  });
  if (finished.size() > options.top_k) finished.resize(options.top_k);
  return finished;
}

BeamHypothesis greedy_search(StepScorer& scorer, int eos, std::size_t max_len) {
  BeamHypothesis h;
  while (h.tokens.size() < max_len) {
    const auto lp = scorer.next_log_probs({h.tokens}).at(0);
    std::size_t best = 0;
    for (std::size_t w = 1; w < lp.size(); ++w) {
      if (lp[w] > lp[best]) best = w;
    }
    h.log_prob += lp[best];
    h.tokens.push_back(static_cast<int>(best));
    if (static_cast<int>(best) == eos) break;
  }
  h.finished = true;
  return h;
}

}  // namespace tatrans
