// Acceptance gate. Prints one PASS/FAIL line per criterion and exits nonzero on any failure.
// Usage: tatrans_acceptance [A1 A2 ...]   (default: all)

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <numeric>
#include <set>
#include <sstream>
#include <utility>

#include "support/oracles.hpp"
#include "support/temp_dir.hpp"
#include "support/tiny_run.hpp"
#include "tatrans/error.hpp"
#include "tatrans/evaluation.hpp"
#include "tatrans/pipeline.hpp"
#include "tatrans/rerank.hpp"
#include "tatrans/semi_supervised.hpp"
#include "tatrans/synthetic.hpp"

using namespace tatrans;
using namespace tatrans::nn;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail << " [failed: " << what << "]";
    }
  }
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---------------------------------------------------------------------------
// A1

Tensor<double> signed_away_from_zero(Shape shape, Rng& rng) {
  Tensor<double> t(std::move(shape));
  for (auto& v : t.data) v = rng.uniform(0.1, 1.0) * (rng.below(2) ? 1.0 : -1.0);
  return t;
}

struct OpCase {
  std::string name;
  std::function<std::pair<std::vector<Tensor<double>>, oracle::Builder>(Rng&)> make;
};

std::vector<OpCase> op_cases() {
  using oracle::random_tensor;
  std::vector<OpCase> ops;
  auto dim = [](Rng& r, std::size_t lo, std::size_t hi) { return lo + r.below(hi - lo + 1); };

  ops.push_back({"matmul", [dim](Rng& r) {
                   const auto m = dim(r, 1, 4), k = dim(r, 1, 4), n = dim(r, 1, 4);
                   return std::pair{std::vector{random_tensor({m, k}, r), random_tensor({k, n}, r)},
                                    oracle::Builder([](Graph<double>& g, const std::vector<Var>& v) {
                                      return matmul(g, v[0], v[1]);
                                    })};
                 }});
  ops.push_back({"matmul_transposed", [dim](Rng& r) {
                   const auto m = dim(r, 1, 4), k = dim(r, 1, 4), n = dim(r, 1, 4);
                   return std::pair{std::vector{random_tensor({m, k}, r), random_tensor({n, k}, r)},
                                    oracle::Builder([](Graph<double>& g, const std::vector<Var>& v) {
                                      return matmul(g, v[0], v[1], Transpose::Yes);
                                    })};
                 }});
  ops.push_back({"add", [dim](Rng& r) {
                   const Shape s{dim(r, 1, 4), dim(r, 1, 5)};
                   return std::pair{std::vector{random_tensor(s, r), random_tensor(s, r)},
                                    oracle::Builder([](Graph<double>& g, const std::vector<Var>& v) {
                                      return add(g, v[0], v[1]);
                                    })};
                 }});
  ops.push_back({"add_bias", [dim](Rng& r) {
                   const auto m = dim(r, 1, 4), n = dim(r, 1, 5);
                   return std::pair{std::vector{random_tensor({m, n}, r), random_tensor({n}, r)},
                                    oracle::Builder([](Graph<double>& g, const std::vector<Var>& v) {
                                      return add_bias(g, v[0], v[1]);
                                    })};
                 }});
  ops.push_back({"mul", [dim](Rng& r) {
                   const Shape s{dim(r, 1, 4), dim(r, 1, 5)};
                   return std::pair{std::vector{random_tensor(s, r), random_tensor(s, r)},
                                    oracle::Builder([](Graph<double>& g, const std::vector<Var>& v) {
                                      return mul(g, v[0], v[1]);
                                    })};
                 }});
  ops.push_back({"scale", [dim](Rng& r) {
                   const double f = r.uniform(-3.0, 3.0);
                   return std::pair{std::vector{random_tensor({dim(r, 1, 4), dim(r, 1, 5)}, r)},
                                    oracle::Builder([f](Graph<double>& g, const std::vector<Var>& v) {
                                      return scale(g, v[0], f);
                                    })};
                 }});
  ops.push_back({"relu", [dim](Rng& r) {
                   return std::pair{std::vector{signed_away_from_zero({dim(r, 1, 4), dim(r, 1, 5)}, r)},
                                    oracle::Builder([](Graph<double>& g, const std::vector<Var>& v) {
                                      return relu(g, v[0]);
                                    })};
                 }});
  ops.push_back({"softmax", [dim](Rng& r) {
                   return std::pair{std::vector{random_tensor({dim(r, 1, 4), dim(r, 1, 6)}, r, -3.0, 3.0)},
                                    oracle::Builder([](Graph<double>& g, const std::vector<Var>& v) {
                                      return softmax(g, v[0]);
                                    })};
                 }});
  ops.push_back({"layer_norm", [dim](Rng& r) {
                   const auto m = dim(r, 1, 4), n = dim(r, 2, 6);
                   return std::pair{std::vector{random_tensor({m, n}, r, -2.0, 2.0), random_tensor({n}, r),
                                                random_tensor({n}, r)},
                                    oracle::Builder([](Graph<double>& g, const std::vector<Var>& v) {
                                      return layer_norm(g, v[0], v[1], v[2]);
                                    })};
                 }});
  ops.push_back({"embedding", [dim](Rng& r) {
                   const auto vocab = dim(r, 1, 6), d = dim(r, 1, 4), n = dim(r, 1, 7);
                   std::vector<int> ids(n);
                   for (auto& i : ids) i = static_cast<int>(r.below(vocab));
                   return std::pair{std::vector{random_tensor({vocab, d}, r)},
                                    oracle::Builder([ids](Graph<double>& g, const std::vector<Var>& v) {
                                      return embedding(g, v[0], ids);
                                    })};
                 }});
  ops.push_back({"cross_entropy", [dim](Rng& r) {
                   const auto m = dim(r, 1, 5), n = dim(r, 2, 6);
                   std::vector<int> targets(m);
                   for (auto& t : targets) t = r.below(4) == 0 ? -1 : static_cast<int>(r.below(n));
                   targets[r.below(m)] = static_cast<int>(r.below(n));
                   return std::pair{std::vector{random_tensor({m, n}, r, -3.0, 3.0)},
                                    oracle::Builder([targets](Graph<double>& g, const std::vector<Var>& v) {
                                      return cross_entropy(g, v[0], targets);
                                    })};
                 }});
  ops.push_back({"sum", [dim](Rng& r) {
                   return std::pair{std::vector{random_tensor({dim(r, 1, 4), dim(r, 1, 5)}, r)},
                                    oracle::Builder([](Graph<double>& g, const std::vector<Var>& v) {
                                      return sum(g, v[0]);
                                    })};
                 }});
  ops.push_back({"dropout", [dim](Rng& r) {
                   const std::uint64_t mask_seed = r.next();
                   return std::pair{std::vector{random_tensor({dim(r, 1, 4), dim(r, 1, 5)}, r)},
                                    oracle::Builder([mask_seed](Graph<double>& g, const std::vector<Var>& v) {
                                      Rng mask(mask_seed);
                                      return dropout(g, v[0], 0.3, mask);
                                    })};
                 }});
  ops.push_back({"attention", [dim](Rng& r) {
                   AttentionLayout layout;
                   layout.batch = dim(r, 1, 2);
                   layout.heads = dim(r, 1, 2);
                   layout.causal = r.below(2) == 1;
                   layout.q_len = dim(r, 1, 3);
                   layout.k_len = layout.causal ? layout.q_len : dim(r, 1, 3);
                   for (std::size_t b = 0; b < layout.batch; ++b) layout.k_valid.push_back(dim(r, 1, layout.k_len));
                   const auto d = layout.heads * dim(r, 1, 3);
                   return std::pair{std::vector{random_tensor({layout.batch * layout.q_len, d}, r),
                                                random_tensor({layout.batch * layout.k_len, d}, r),
                                                random_tensor({layout.batch * layout.k_len, d}, r)},
                                    oracle::Builder([layout](Graph<double>& g, const std::vector<Var>& v) {
                                      return attention(g, v[0], v[1], v[2], layout);
                                    })};
                 }});
  return ops;
}

// Gradients of every parameter of `model` for one forward_loss call.
template <typename Model>
std::map<std::string, std::vector<double>> loss_grads(Model& model, const std::vector<TokenPair>& batch) {
  model.params().zero_grad();
  Graph<double> g(model.params());
  g.backward(model.forward_loss(g, batch));
  std::map<std::string, std::vector<double>> out;
  for (std::size_t i = 0; i < model.params().size(); ++i) out[model.params()[i].name] = model.params()[i].grad;
  return out;
}

Outcome a1() {
  Outcome o;
  const auto t0 = std::chrono::steady_clock::now();
  constexpr int kCases = 20;
  double worst_overall = 0.0;
  std::size_t op_count = 0;
  for (const auto& op : op_cases()) {
    Rng rng(Rng::derive(1001, op_count++));
    double worst = 0.0;
    for (int c = 0; c < kCases; ++c) {
      auto [inputs, build] = op.make(rng);
      worst = std::max(worst, oracle::grad_check(inputs, build, rng.next()));
    }
    o.require(worst < 1e-4, op.name + " relative error " + std::to_string(worst));
    worst_overall = std::max(worst_overall, worst);
  }

  // Tied decoder embedding: its gradient must equal the embedding-path plus the
  // output-path gradients of an untied copy holding the same values.
  TransformerConfig cfg;
  cfg.num_layers = 1;
  cfg.num_heads = 2;
  cfg.model_dim = 16;
  cfg.ffn_dim = 32;
  cfg.max_len = 12;
  double tied_gap = 0.0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    cfg.share_decoder_embeddings = true;
    TranslationModel<double> tied(cfg, 15, 18, seed);
    cfg.share_decoder_embeddings = false;
    TranslationModel<double> untied(cfg, 15, 18, seed + 100);
    for (std::size_t i = 0; i < tied.params().size(); ++i) {
      const auto& p = tied.params()[i];
      untied.params()[*untied.params().find(p.name)].value = p.value;
    }
    untied.params()[*untied.target_output_id()].value = tied.params()[tied.target_embedding_id()].value;
    Rng rng(seed);
    std::vector<TokenPair> batch(3);
    for (auto& tp : batch) {
      tp.source.resize(1 + rng.below(6));
      tp.target.resize(1 + rng.below(6));
      for (auto& t : tp.source) t = kFirstLabelControl + static_cast<int>(rng.below(15 - kFirstLabelControl));
      for (auto& t : tp.target) t = kFirstLabelControl + static_cast<int>(rng.below(18 - kFirstLabelControl));
    }
    const auto gt = loss_grads(tied, batch);
    const auto gu = loss_grads(untied, batch);
    const auto& g_tied = gt.at("tgt_embed");
    const auto& g_in = gu.at("tgt_embed");
    const auto& g_out = gu.at("tgt_out");
    for (std::size_t k = 0; k < g_tied.size(); ++k) tied_gap = std::max(tied_gap, std::abs(g_tied[k] - (g_in[k] + g_out[k])));
    for (const auto& [name, grad] : gt) {
      if (name == "tgt_embed") continue;
      for (std::size_t k = 0; k < grad.size(); ++k) tied_gap = std::max(tied_gap, std::abs(grad[k] - gu.at(name)[k]));
    }
  }
  o.require(tied_gap <= 1e-6, "tied gradient gap " + std::to_string(tied_gap));
  const double secs = seconds_since(t0);
  o.require(secs < 60.0, "runtime " + std::to_string(secs) + " s");
  o.detail << op_count << " ops x " << kCases << " cases, worst rel. error " << worst_overall << ", tied gap "
           << tied_gap << ", " << secs << " s";
  return o;
}

// ---------------------------------------------------------------------------
// A2

std::string random_text(Rng& rng, std::size_t max_len) {
  static const std::vector<std::string> chars{"天", "地", "人", "和", "之", "也"};
  std::string s;
  const auto n = rng.below(max_len + 1);
  for (std::uint64_t i = 0; i < n; ++i) s += chars[rng.below(chars.size())];
  return s;
}

Outcome a2() {
  Outcome o;
  const auto t0 = std::chrono::steady_clock::now();

  std::size_t beam_ok = 0;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    Rng rng(seed);
    const std::size_t vocab = 3 + rng.below(2);
    const std::size_t max_len = 2 + rng.below(2);
    oracle::ToyScorer model(vocab, seed * 7919);
    const auto want = oracle::exhaustive_best(model, vocab, kEos, max_len);
    const auto got = beam_search(model, BeamOptions{64, 1, max_len, kEos});
    if (got.size() == 1 && got[0].tokens == want.tokens && std::abs(got[0].log_prob - want.log_prob) < 1e-12) ++beam_ok;
  }
  o.require(beam_ok == 20, "beam search matched " + std::to_string(beam_ok) + "/20 toy models");

  double bleu_gap = 0.0;
  Rng rng(2024);
  for (int corpus = 0; corpus < 50; ++corpus) {
    std::vector<std::string> h, r;
    const auto n = 1 + rng.below(5);
    for (std::uint64_t i = 0; i < n; ++i) {
      h.push_back(random_text(rng, 9));
      r.push_back(random_text(rng, 9));
    }
    bleu_gap = std::max(bleu_gap, std::abs(bleu(h, r).bleu - oracle::naive_bleu(h, r).bleu));
  }
  o.require(bleu_gap <= 1e-9, "BLEU gap " + std::to_string(bleu_gap));

  // Rerank against brute-force rescoring of every cell with a randomly initialized LM.
  const auto labels = LabelSet::standard();
  const auto joint = Vocabulary::build({"天地玄黄宇宙洪荒日月盈昃辰宿列张"}, labels);
  LMConfig lc;
  lc.num_layers = 1;
  lc.num_heads = 2;
  lc.model_dim = 16;
  lc.ffn_dim = 32;
  lc.context = 16;
  std::size_t rerank_ok = 0, rerank_runs = 0;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const LanguageModel<double> lm(lc, joint.size(), seed);
    Rng cr(seed + 50);
    std::vector<std::string> cands;
    const std::vector<std::string> chars{"玄", "黄", "宇", "宙", "洪", "荒", "日", "月"};
    for (std::size_t k = 0; k < 5; ++k) {
      std::string c;
      for (std::uint64_t i = 0, n = 1 + cr.below(10); i < n; ++i) c += chars[cr.below(chars.size())];
      cands.push_back(c);
    }
    double best = INFINITY;
    std::size_t best_r = 0, best_l = 0;
    bool any = false;
    for (std::size_t c = 0; c < cands.size(); ++c) {
      for (std::size_t l = 0; l < labels.size(); ++l) {
        if (build_query({"天地", cands[c], labels.names()[l]}, joint).size() > lc.context) continue;
        const auto s = score(lm, {"天地", cands[c], labels.names()[l]}, joint);
        any = true;
        if (s.per_token_nll < best) {
          best = s.per_token_nll;
          best_r = c;
          best_l = l;
        }
      }
    }
    if (!any) continue;
    ++rerank_runs;
    const auto r = rerank(lm, joint, "天地", cands, labels);
    if (r.best.beam_rank == best_r && r.best.label_index == best_l) ++rerank_ok;
  }
  o.require(rerank_ok == rerank_runs, "rerank matched " + std::to_string(rerank_ok) + "/" + std::to_string(rerank_runs));

  const double secs = seconds_since(t0);
  o.require(secs < 120.0, "runtime " + std::to_string(secs) + " s");
  o.detail << "beam " << beam_ok << "/20, BLEU gap " << bleu_gap << " over 50 corpora, rerank " << rerank_ok << "/"
           << rerank_runs << ", " << secs << " s";
  return o;
}

// ---------------------------------------------------------------------------
// A3

template <typename T>
void zero_param(ParameterStore<T>& store, const std::string& name) {
  auto& p = store[*store.find(name)];
  std::fill(p.value.data.begin(), p.value.data.end(), T{});
}

Outcome a3() {
  Outcome o;
  constexpr std::size_t kSrc = 23, kTgt = 31, kLm = 37;
  TransformerConfig cfg;
  cfg.num_layers = 1;
  cfg.num_heads = 2;
  cfg.model_dim = 16;
  cfg.ffn_dim = 32;
  TranslationModel<double> mt(cfg, kSrc, kTgt, 4);
  zero_param(mt.params(), "tgt_out");
  zero_param(mt.params(), "src_out");
  const std::vector<TokenPair> batch{{{8, 9, 10}, {11, 12}}, {{13}, {14, 15, 16, 17}}};
  const std::vector<std::vector<int>> mono_m{{8, 9, 20}, {30}}, mono_a{{10, 11}, {12, 13, 14, 15}};
  double gap = 0.0;
  {
    Graph<double> g(std::as_const(mt).params());
    gap = std::max(gap, std::abs(g.value(mt.forward_loss(g, batch)).item() - std::log(double(kTgt))));
    gap = std::max(gap, std::abs(g.value(supervised_loss(g, mt, batch)).item() - std::log(double(kTgt))));
    gap = std::max(gap, std::abs(g.value(lm_loss_target(g, mt, mono_m)).item() - std::log(double(kTgt))));
    gap = std::max(gap, std::abs(g.value(lm_loss_source(g, mt, mono_a)).item() - std::log(double(kSrc))));
  }
  LMConfig lc;
  lc.num_layers = 1;
  lc.num_heads = 2;
  lc.model_dim = 16;
  lc.ffn_dim = 32;
  lc.context = 32;
  LanguageModel<double> lm(lc, kLm, 5);
  zero_param(lm.params(), "embed");
  const std::vector<std::vector<int>> seqs{{8, 9, kEos}, {10, 11, 12, 13, kEos}};
  for (const auto& s : lm.score_batch(seqs)) gap = std::max(gap, std::abs(s.per_token_nll - std::log(double(kLm))));
  const double ppl = perplexity(lm, seqs);
  o.require(gap <= 1e-6, "uniform NLL gap " + std::to_string(gap));
  o.require(std::abs(ppl - double(kLm)) <= 1e-6 * kLm, "uniform perplexity " + std::to_string(ppl));

  Rng rng(77);
  double softmax_gap = 0.0, norm_gap = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t m = 1 + rng.below(5), n = 2 + rng.below(8);
    const auto x = oracle::random_tensor({m, n}, rng, -10.0, 10.0);
    const double shift = rng.uniform(-50.0, 50.0);
    auto shifted = x;
    for (auto& v : shifted.data) v += shift;
    Graph<double> g(false);
    const auto p = g.value(softmax(g, g.constant(x)));
    const auto ps = g.value(softmax(g, g.constant(shifted)));
    Tensor<double> ones({n}, 1.0), zeros({n}, 0.0);
    const auto y = g.value(layer_norm(g, g.constant(x), g.constant(ones), g.constant(zeros)));
    for (std::size_t r = 0; r < m; ++r) {
      double total = 0.0, mean = 0.0, var = 0.0, xmean = 0.0, xvar = 0.0;
      for (std::size_t c = 0; c < n; ++c) {
        total += p.at(r, c);
        softmax_gap = std::max(softmax_gap, std::abs(p.at(r, c) - ps.at(r, c)));
        if (p.at(r, c) < 0.0) softmax_gap = INFINITY;
        mean += y.at(r, c) / double(n);
        xmean += x.at(r, c) / double(n);
      }
      for (std::size_t c = 0; c < n; ++c) {
        var += (y.at(r, c) - mean) * (y.at(r, c) - mean) / double(n);
        xvar += (x.at(r, c) - xmean) * (x.at(r, c) - xmean) / double(n);
      }
      softmax_gap = std::max(softmax_gap, std::abs(total - 1.0));
      norm_gap = std::max({norm_gap, std::abs(mean), std::abs(var - xvar / (xvar + 1e-5))});
    }
  }
  o.require(softmax_gap <= 1e-12, "softmax invariant gap " + std::to_string(softmax_gap));
  o.require(norm_gap <= 1e-10, "layer_norm invariant gap " + std::to_string(norm_gap));
  o.detail << "uniform NLL gap " << gap << ", perplexity " << ppl << " (|V| = " << kLm << "), softmax gap "
           << softmax_gap << ", layer_norm gap " << norm_gap;
  return o;
}

// ---------------------------------------------------------------------------
// A4

std::vector<std::vector<std::string>> tsv_rows(const fs::path& p) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream in(read_text_file(p));
  std::string line;
  std::getline(in, line);  // header
  while (std::getline(in, line)) {
    std::vector<std::string> f;
    std::size_t start = 0;
    while (true) {
      const auto tab = line.find('\t', start);
      f.push_back(line.substr(start, tab == std::string::npos ? std::string::npos : tab - start));
      if (tab == std::string::npos) break;
      start = tab + 1;
    }
    rows.push_back(std::move(f));
  }
  return rows;
}

// Rescores every candidate x label cell of a finished run one query at a time and
// checks the chosen cell against the minimum. Tolerance covers float batching.
std::pair<std::size_t, std::size_t> verify_rerank(const WorkLayout& w, const LabelSet& labels) {
  const auto lm = load_lm(w.lm_finetuned());
  const auto test = load_parallel(w.test(), labels);
  const auto nbest = parse_nbest(read_text_file(w.nbest()));
  const auto chosen = tsv_rows(w.reranked());
  std::vector<std::vector<std::string>> cands(test.size());
  for (const auto& e : nbest) cands[e.index].push_back(e.candidate);
  std::size_t ok = 0;
  for (std::size_t i = 0; i < test.size(); ++i) {
    double best = INFINITY, picked = INFINITY;
    for (const auto& c : cands[i]) {
      for (const auto& label : labels.names()) {
        if (build_query({test[i].source, c, label}, lm.joint).size() > lm.model->config().context) continue;
        const double s = score(*lm.model, {test[i].source, c, label}, lm.joint).per_token_nll;
        best = std::min(best, s);
        if (c == chosen[i][2] && label == chosen[i][3]) picked = std::min(picked, s);
      }
    }
    if (picked <= best + 1e-4) ++ok;
  }
  return {ok, test.size()};
}

Outcome a4() {
  Outcome o;
  testutil::TempDir dir("acceptance-a4");
  const auto labels = LabelSet::standard();
  auto syn = make_synthetic_config(labels, SyntheticShape{}, 1);
  syn.n_parallel = 2400;
  syn.n_mono_a = 2000;
  syn.n_mono_m = 2000;
  const auto corpus = gen_synthetic(syn, 1);
  save_parallel(dir / "parallel.tsv", corpus.parallel);
  save_mono(dir / "mono_a.txt", corpus.mono_a);
  save_mono(dir / "mono_m.txt", corpus.mono_m);

  RunConfig cfg;
  cfg.parallel_path = (dir / "parallel.tsv").string();
  cfg.mono_a_path = (dir / "mono_a.txt").string();
  cfg.mono_m_path = (dir / "mono_m.txt").string();
  cfg.dev_frac = 200.0 / 2400.0 + 1e-10;
  cfg.test_frac = 200.0 / 2400.0 + 1e-10;
  cfg.work_dir = (dir / "work").string();
  const WorkLayout w{dir / "work"};

  const auto t0 = std::chrono::steady_clock::now();
  run_pipeline(cfg, {all_stages().begin(), all_stages().end()});
  const double secs = seconds_since(t0);

  const auto split_sizes = std::array{load_parallel(w.train(), labels).size(), load_parallel(w.dev(), labels).size(),
                                      load_parallel(w.test(), labels).size()};
  o.require(split_sizes == std::array<std::size_t, 3>{2000, 200, 200}, "split is not 2000/200/200");

  const auto report = evaluation_report_from_json(nlohmann::json::parse(read_text_file(w.report_dir() / "report.json")));
  const double top1 = report.bleu.at(0).second.bleu;
  const double reranked = report.bleu.at(1).second.bleu;
  const double chron = report.classification.at(0).second.accuracy;
  o.require(top1 > 0.75, "top-1 BLEU " + std::to_string(top1));
  o.require(chron > 0.90, "chronology accuracy " + std::to_string(chron));
  o.require(reranked >= top1 - 0.01, "reranked BLEU " + std::to_string(reranked));
  o.require(secs <= 600.0, "runtime " + std::to_string(secs) + " s");
  const auto [rr_ok, rr_total] = verify_rerank(w, labels);
  o.require(rr_ok == rr_total, "rerank brute-force agreement " + std::to_string(rr_ok) + "/" + std::to_string(rr_total));
  o.detail << "BLEU top1 " << top1 << ", reranked " << reranked << ", chronology accuracy " << chron
           << ", rerank brute force " << rr_ok << "/" << rr_total << ", " << secs << " s";
  return o;
}

// ---------------------------------------------------------------------------
// A5

struct Starved {
  Vocabulary src, tgt;
  TrainData data;
  std::vector<std::vector<int>> test_src;
  std::vector<std::string> test_ref;
};

Starved starved_setting() {
  const auto labels = LabelSet::standard();
  auto syn = make_synthetic_config(labels, SyntheticShape{}, 5);
  syn.n_parallel = 400;
  syn.n_mono_a = 0;
  syn.n_mono_m = 2000;
  const auto corpus = gen_synthetic(syn, 5);
  const std::vector<ParallelExample> train(corpus.parallel.begin(), corpus.parallel.begin() + 200);
  const std::vector<ParallelExample> test(corpus.parallel.begin() + 200, corpus.parallel.end());
  std::vector<std::string> src_text, tgt_text = corpus.mono_m.sentences;
  for (const auto& e : train) {
    src_text.push_back(e.source);
    tgt_text.push_back(e.target);
  }
  Starved s{Vocabulary::build(src_text, labels), Vocabulary::build(tgt_text, labels), {}, {}, {}};
  for (const auto& e : train) s.data.parallel.push_back({s.src.encode(e.source), s.tgt.encode(e.target)});
  for (const auto& m : corpus.mono_m.sentences) s.data.mono_m.push_back(s.tgt.encode(m));
  for (const auto& e : test) {
    s.test_src.push_back(s.src.encode(e.source));
    s.test_ref.push_back(e.target);
  }
  return s;
}

double starved_bleu(const Starved& s, const ObjectiveWeights& w, std::uint64_t seed) {
  TranslationModel<float> model(TransformerConfig{}, s.src.size(), s.tgt.size(), seed);
  TrainSchedule sch;
  sch.epochs = 40;
  sch.warmup = 100;
  sch.seed = seed;
  train(model, s.data, w, sch);
  std::vector<std::string> hyps;
  for (const auto& ids : greedy_translate(model, s.test_src, 64)) hyps.push_back(s.tgt.decode(ids));
  return bleu(hyps, s.test_ref).bleu;
}

Outcome a5() {
  Outcome o;
  const auto t0 = std::chrono::steady_clock::now();
  const auto s = starved_setting();
  std::size_t wins = 0;
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    const double off = starved_bleu(s, {1.0, 0.0, 0.0}, seed);
    const double on = starved_bleu(s, {1.0, 0.0, 1.0}, seed);
    if (on > off) ++wins;
    o.detail << "seed " << seed << ": sup " << off << " vs +lm(M) " << on << "; ";
  }
  o.require(wins >= 2, "L_lm(M) won " + std::to_string(wins) + "/3 seeds");

  // Empty mono corpora: the composite objective is the supervised one, bit for bit.
  TrainData p_only;
  p_only.parallel = s.data.parallel;
  TrainSchedule sch;
  sch.epochs = 2;
  sch.seed = 9;
  TranslationModel<float> a(TransformerConfig{}, s.src.size(), s.tgt.size(), 9);
  TranslationModel<float> b(TransformerConfig{}, s.src.size(), s.tgt.size(), 9);
  const auto ra = train(a, p_only, {1.0, 1.0, 1.0}, sch);
  const auto rb = train(b, p_only, {1.0, 0.0, 0.0}, sch);
  bool identical = ra.steps.size() == rb.steps.size();
  for (std::size_t i = 0; identical && i < ra.steps.size(); ++i) {
    identical = ra.steps[i].total == rb.steps[i].total && ra.steps[i].total == ra.steps[i].l_sup;
  }
  for (std::size_t i = 0; identical && i < a.params().size(); ++i) identical = a.params()[i].value.data == b.params()[i].value.data;
  o.require(identical, "empty-mono composite differs from supervised");
  const double secs = seconds_since(t0);
  o.detail << "wins " << wins << "/3, empty-mono identical " << (identical ? "yes" : "no") << ", " << secs << " s";
  return o;
}

// ---------------------------------------------------------------------------
// A6

Outcome a6() {
  Outcome o;
  const auto labels = LabelSet::standard();
  const auto c = classification_metrics({"han", "han", "song", "pre-qin"}, {"han", "song", "song", "han"}, labels);
  const std::vector<std::vector<std::size_t>> confusion{{0, 1, 0}, {0, 1, 1}, {0, 0, 1}};
  bool hand = c.confusion == confusion && c.accuracy == 0.5 && c.total == 4;
  const std::array<double, 3> p{0.0, 0.5, 0.5}, r{0.0, 0.5, 1.0}, f{0.0, 0.5, 2.0 / 3.0};
  const std::array<std::size_t, 3> support{1, 2, 1};
  for (std::size_t i = 0; i < 3; ++i) {
    hand = hand && c.per_label[i].precision == p[i] && c.per_label[i].recall == r[i] &&
           std::abs(c.per_label[i].f1 - f[i]) < 1e-15 && c.per_label[i].support == support[i];
  }
  hand = hand && std::abs(c.macro.precision - 1.0 / 3.0) < 1e-15 && c.macro.recall == 0.5 &&
         std::abs(c.weighted.precision - 0.375) < 1e-15 && c.weighted.recall == 0.5;
  o.require(hand, "hand-counted confusion example");

  EvaluationReport report;
  report.bleu.emplace_back("top1", bleu({"今天天气", "子曰学", "天下"}, {"今天天气好", "子曰学而", "天下"},
                                        {"han", "pre-qin", "song"}, &labels));
  report.classification.emplace_back("system", c);
  testutil::TempDir dir("acceptance-a6");
  write_reports(report, dir.path());
  const auto back = evaluation_report_from_json(nlohmann::json::parse(read_text_file(dir / "report.json")));
  o.require(back == report, "report.json round trip");

  Rng rng(31);
  std::vector<std::string> h, ref, l;
  for (int i = 0; i < 60; ++i) {
    h.push_back(random_text(rng, 10));
    ref.push_back(random_text(rng, 10));
    l.push_back(labels.names()[rng.below(3)]);
  }
  const auto b = bleu(h, ref, l, &labels);
  std::size_t sent = 0, hc = 0, rc = 0;
  for (const auto& pl : b.per_label) {
    sent += pl.sentences;
    hc += pl.hyp_chars;
    rc += pl.ref_chars;
  }
  o.require(sent == b.sentences && hc == b.hyp_chars && rc == b.ref_chars, "per-label subsets do not partition");
  o.detail << "confusion exact " << (hand ? "yes" : "no") << ", round trip " << (back == report ? "yes" : "no")
           << ", partition " << sent << "/" << b.sentences << " sentences, " << hc << "/" << b.hyp_chars << " chars";
  return o;
}

// ---------------------------------------------------------------------------
// A7

std::map<std::string, std::string> snapshot(const fs::path& dir) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::directory_iterator(dir)) files[e.path().filename().string()] = read_text_file(e.path());
  return files;
}

Outcome a7() {
  Outcome o;
  testutil::TempDir dir("acceptance-a7");
  const auto files = testutil::write_synthetic(dir.path(), 200, 200, 200, 11);
  const auto cfg = testutil::tiny_run(files, dir / "work");
  const WorkLayout w{dir / "work"};
  std::map<std::string, std::string> runs[2];
  std::map<std::string, std::string> outs[2];
  for (int i = 0; i < 2; ++i) {
    fs::remove_all(w.root);
    run_pipeline(cfg, {all_stages().begin(), all_stages().end()});
    runs[i] = snapshot(w.report_dir());
    outs[i] = snapshot(w.root / "out");
  }
  o.require(!runs[0].empty() && runs[0] == runs[1], "report files differ between runs");
  o.require(outs[0] == outs[1], "decoded outputs differ between runs");
  o.detail << runs[0].size() << " report files and " << outs[0].size() << " output files byte-identical";
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"A1", a1}, {"A2", a2}, {"A3", a3}, {"A4", a4}, {"A5", a5}, {"A6", a6}, {"A7", a7}};
  std::set<std::string> only(argv + 1, argv + argc);
  int failures = 0;
  for (const auto& [id, run] : criteria) {
    if (!only.empty() && !only.count(id)) continue;
    Outcome o;
    try {
      o = run();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail << " [exception: " << e.what() << "]";
    }
    if (!o.pass) ++failures;
    std::cout << id << " " << (o.pass ? "PASS" : "FAIL") << ": " << o.detail.str() << std::endl;
  }
  return failures == 0 ? 0 : 1;
}
