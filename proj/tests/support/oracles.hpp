#pragma once

// Independent reference implementations used by unit and acceptance tests.

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "tatrans/beam_search.hpp"
#include "tatrans/ops.hpp"
#include "tatrans/random.hpp"
#include "tatrans/utf8.hpp"

namespace oracle {

using tatrans::Rng;
using tatrans::nn::Graph;
using tatrans::nn::Shape;
using tatrans::nn::Tensor;
using tatrans::nn::Var;

inline Tensor<double> random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor<double> t(std::move(shape));
  for (auto& v : t.data) v = rng.uniform(lo, hi);
  return t;
}

/// Maps graph inputs to an output node of any shape.
using Builder = std::function<Var(Graph<double>&, const std::vector<Var>&)>;

/// Largest norm-wise relative error between backpropagated and central-difference
/// gradients over all inputs, for the scalar sum(out * W) with a fixed random W.
inline double grad_check(const std::vector<Tensor<double>>& inputs, const Builder& build, std::uint64_t seed,
                         double h = 1e-5) {
  Tensor<double> weights;
  auto loss_of = [&](Graph<double>& g, const std::vector<Var>& vars) {
    const Var out = build(g, vars);
    if (weights.shape != g.shape(out)) {
      Rng w_rng(seed);
      weights = random_tensor(g.shape(out), w_rng);
    }
    return tatrans::nn::sum(g, tatrans::nn::mul(g, out, g.constant(weights)));
  };

  Graph<double> g(true);
  std::vector<Var> vars;
  for (const auto& t : inputs) vars.push_back(g.input(t));
  const Var loss = loss_of(g, vars);
  g.backward(loss);

  double worst = 0.0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    std::vector<double> analytic = g.grad(vars[i]);
    if (analytic.empty()) analytic.assign(inputs[i].size(), 0.0);
    std::vector<double> numeric(inputs[i].size());
    for (std::size_t k = 0; k < inputs[i].size(); ++k) {
      double f[2];
      for (int s = 0; s < 2; ++s) {
        auto perturbed = inputs;
        perturbed[i].data[k] += s == 0 ? h : -h;
        Graph<double> fg(false);
        std::vector<Var> fv;
        for (const auto& t : perturbed) fv.push_back(fg.input(t));
        f[s] = fg.value(loss_of(fg, fv)).item();
      }
      numeric[k] = (f[0] - f[1]) / (2.0 * h);
    }
    double diff = 0.0, na = 0.0, nn_ = 0.0;
    for (std::size_t k = 0; k < numeric.size(); ++k) {
      diff += (analytic[k] - numeric[k]) * (analytic[k] - numeric[k]);
      na += analytic[k] * analytic[k];
      nn_ += numeric[k] * numeric[k];
    }
    const double denom = std::max({std::sqrt(na), std::sqrt(nn_), 1e-7});
    worst = std::max(worst, std::sqrt(diff) / denom);
  }
  return worst;
}

// ---------------------------------------------------------------------------
// BLEU by direct enumeration: n-grams as lists, counted by linear scans.

struct NaiveBleu {
  double bleu = 0.0;
  double bp = 1.0;
  double precisions[4] = {0, 0, 0, 0};
};

inline std::vector<std::u32string> all_ngrams(const std::u32string& s, std::size_t n) {
  std::vector<std::u32string> out;
  if (s.size() < n) return out;
  for (std::size_t i = 0; i + n <= s.size(); ++i) out.push_back(s.substr(i, n));
  return out;
}

inline NaiveBleu naive_bleu(const std::vector<std::string>& hyps, const std::vector<std::string>& refs) {
  double match[4] = {0, 0, 0, 0}, total[4] = {0, 0, 0, 0}, ref_total[4] = {0, 0, 0, 0};
  double h_len = 0, r_len = 0;
  for (std::size_t i = 0; i < hyps.size(); ++i) {
    const auto h = tatrans::utf8::decode(hyps[i]);
    const auto r = tatrans::utf8::decode(refs[i]);
    h_len += static_cast<double>(h.size());
    r_len += static_cast<double>(r.size());
    for (std::size_t n = 1; n <= 4; ++n) {
      auto hg = all_ngrams(h, n);
      auto rg = all_ngrams(r, n);
      total[n - 1] += static_cast<double>(hg.size());
      ref_total[n - 1] += static_cast<double>(rg.size());
      // Greedy one-to-one pairing equals clipped counting.
      std::vector<bool> used(rg.size(), false);
      for (const auto& gram : hg) {
        for (std::size_t j = 0; j < rg.size(); ++j) {
          if (!used[j] && rg[j] == gram) {
            used[j] = true;
            match[n - 1] += 1;
            break;
          }
        }
      }
    }
  }
  NaiveBleu out;
  if (h_len == 0 && r_len == 0) {
    out.bleu = 1.0;
    for (double& p : out.precisions) p = 1.0;
    return out;
  }
  double log_mean = 0.0;
  for (int n = 0; n < 4; ++n) {
    double p;
    if (total[n] == 0) {
      p = ref_total[n] == 0 ? 1.0 : 0.5;
    } else if (match[n] == 0) {
      p = n == 0 ? 0.0 : 0.5 / total[n];
    } else {
      p = match[n] / total[n];
    }
    out.precisions[n] = p;
    log_mean += 0.25 * std::log(p);
  }
  out.bp = h_len == 0 ? 0.0 : (h_len < r_len ? std::exp(1.0 - r_len / h_len) : 1.0);
  out.bleu = out.bp * std::exp(log_mean);
  return out;
}

// ---------------------------------------------------------------------------
// Toy step models for beam search.

/// Next-token distribution depends on the whole prefix, drawn once per prefix.
class ToyScorer : public tatrans::StepScorer {
 public:
  ToyScorer(std::size_t vocab, std::uint64_t seed, double peak = 0.0) : vocab_(vocab), seed_(seed), peak_(peak) {}

  std::vector<double> dist(const std::vector<int>& prefix) {
    auto it = cache_.find(prefix);
    if (it != cache_.end()) return it->second;
    std::uint64_t key = seed_;
    for (int t : prefix) key = Rng::derive(key, static_cast<std::uint64_t>(t) + 1);
    key = Rng::derive(key, prefix.size() + 101);
    Rng rng(key);
    std::vector<double> p(vocab_);
    if (peak_ > 0.0) {
      const std::size_t top = rng.below(vocab_);
      for (std::size_t w = 0; w < vocab_; ++w) p[w] = w == top ? peak_ : (1.0 - peak_) / static_cast<double>(vocab_ - 1);
    } else {
      double z = 0.0;
      for (auto& v : p) z += (v = rng.uniform(0.05, 1.0));
      for (auto& v : p) v /= z;
    }
    for (auto& v : p) v = std::log(v);
    cache_.emplace(prefix, p);
    return p;
  }

  std::vector<std::vector<double>> next_log_probs(const std::vector<std::vector<int>>& prefixes) override {
    std::vector<std::vector<double>> out;
    for (const auto& p : prefixes) out.push_back(dist(p));
    return out;
  }

 private:
  std::size_t vocab_;
  std::uint64_t seed_;
  double peak_;
  std::map<std::vector<int>, std::vector<double>> cache_;
};

/// Every finished sequence (ending in EOS, or reaching max_len) with its log-probability.
inline std::vector<tatrans::BeamHypothesis> enumerate_all(ToyScorer& model, std::size_t vocab, int eos,
                                                          std::size_t max_len) {
  std::vector<tatrans::BeamHypothesis> done;
  std::function<void(std::vector<int>&, double)> rec = [&](std::vector<int>& prefix, double lp) {
    const auto d = model.dist(prefix);
    for (std::size_t w = 0; w < vocab; ++w) {
      prefix.push_back(static_cast<int>(w));
      const double next = lp + d[w];
      if (static_cast<int>(w) == eos || prefix.size() == max_len) {
        done.push_back({prefix, next, true});
      } else {
        rec(prefix, next);
      }
      prefix.pop_back();
    }
  };
  std::vector<int> start;
  rec(start, 0.0);
  return done;
}

inline tatrans::BeamHypothesis exhaustive_best(ToyScorer& model, std::size_t vocab, int eos, std::size_t max_len) {
  auto all = enumerate_all(model, vocab, eos, max_len);
  return *std::max_element(all.begin(), all.end(), [](const auto& a, const auto& b) { return a.score() < b.score(); });
}

}  // namespace oracle
