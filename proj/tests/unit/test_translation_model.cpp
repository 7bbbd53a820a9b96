#include <cmath>
#include <utility>

#include "doctest.h"
#include "support/oracles.hpp"
#include "tatrans/error.hpp"
#include "tatrans/tokenizer.hpp"
#include "tatrans/translation_model.hpp"

using namespace tatrans;
using namespace tatrans::nn;

namespace {

TransformerConfig tiny(bool tied = false) {
  TransformerConfig c;
  c.num_layers = 1;
  c.num_heads = 2;
  c.model_dim = 16;
  c.ffn_dim = 32;
  c.max_len = 16;
  c.share_decoder_embeddings = tied;
  return c;
}

std::vector<int> random_sentence(Rng& rng, std::size_t vocab, std::size_t min_len, std::size_t max_len) {
  std::vector<int> s(min_len + rng.below(max_len - min_len + 1));
  for (auto& t : s) t = kFirstLabelControl + static_cast<int>(rng.below(vocab - kFirstLabelControl));
  return s;
}

template <typename T>
void zero_param(ParameterStore<T>& store, const std::string& name) {
  auto& p = store[*store.find(name)];
  std::fill(p.value.data.begin(), p.value.data.end(), T{});
}

}  // namespace

TEST_SUITE("translation-model") {
  TEST_CASE("config validation and json") {
    auto c = tiny();
    CHECK_NOTHROW(c.validate());
    const auto back = TransformerConfig::from_json(c.to_json());
    CHECK(back.to_json() == c.to_json());
    c.num_heads = 3;
    CHECK_THROWS_AS(c.validate(), ValidationError);
    c = tiny();
    c.num_layers = 0;
    CHECK_THROWS_AS(c.validate(), ValidationError);
    c = tiny();
    c.dropout = 1.0;
    CHECK_THROWS_AS(c.validate(), ValidationError);
  }

  TEST_CASE("framing") {
    CHECK(decoder_input({9, 8}) == std::vector<int>{kBos, 9, 8});
    CHECK(decoder_labels({9, 8}) == std::vector<int>{9, 8, kEos});
  }

  TEST_CASE("tying removes the separate output table") {
    const TranslationModel<float> untied(tiny(false), 20, 30, 1);
    const TranslationModel<float> tied(tiny(true), 20, 30, 1);
    CHECK(untied.target_output_id());
    CHECK_FALSE(tied.target_output_id());
    CHECK(untied.parameter_count() - tied.parameter_count() == 30 * 16);
  }

  TEST_CASE("encoder output shape") {
    const TranslationModel<double> m(tiny(), 20, 30, 2);
    Graph<double> g(std::as_const(m).params());
    const auto enc = m.encode(g, {{10, 11, 12, 13, 14}});
    CHECK(g.shape(enc.memory) == Shape{5, 16});
    CHECK(enc.lengths == std::vector<std::size_t>{5});
  }

  TEST_CASE("padding does not leak into encodings") {
    const TranslationModel<double> m(tiny(), 20, 30, 3);
    const std::vector<int> a{10, 11, 12}, b{13, 14, 15, 16, 17, 18};
    Graph<double> g1(std::as_const(m).params());
    const auto alone = g1.value(m.encode(g1, {a}).memory);
    Graph<double> g2(std::as_const(m).params());
    const auto both = g2.value(m.encode(g2, {a, b}).memory);
    for (std::size_t i = 0; i < alone.size(); ++i) CHECK(both.data[i] == doctest::Approx(alone.data[i]).epsilon(1e-12));
  }

  TEST_CASE("permuting the batch permutes the outputs") {
    const TranslationModel<double> m(tiny(), 20, 30, 4);
    Rng rng(1);
    std::vector<TokenPair> pairs;
    for (int i = 0; i < 3; ++i) pairs.push_back({random_sentence(rng, 20, 2, 6), random_sentence(rng, 30, 2, 6)});
    auto logits_of = [&](const std::vector<TokenPair>& batch) {
      Graph<double> g(std::as_const(m).params());
      std::vector<std::vector<int>> src, in;
      for (const auto& p : batch) {
        src.push_back(p.source);
        in.push_back(decoder_input(p.target));
      }
      const auto enc = m.encode(g, src);
      const Var logits = m.decode(g, enc, in);
      return std::make_pair(g.value(logits), g.value(enc.memory));
    };
    const auto [l1, e1] = logits_of(pairs);
    const auto [l2, e2] = logits_of({pairs[2], pairs[0], pairs[1]});
    const std::size_t src_len = e1.rows() / 3, tgt_len = l1.rows() / 3;
    const std::size_t order[3] = {2, 0, 1};
    for (std::size_t slot = 0; slot < 3; ++slot) {
      const std::size_t orig = order[slot];
      for (std::size_t r = 0; r < pairs[orig].source.size(); ++r) {
        for (std::size_t c = 0; c < 16; ++c) {
          CHECK(e2.at(slot * src_len + r, c) == doctest::Approx(e1.at(orig * src_len + r, c)).epsilon(1e-12));
        }
      }
      for (std::size_t r = 0; r <= pairs[orig].target.size(); ++r) {
        for (std::size_t c = 0; c < 30; ++c) {
          CHECK(l2.at(slot * tgt_len + r, c) == doctest::Approx(l1.at(orig * tgt_len + r, c)).epsilon(1e-12));
        }
      }
    }
  }

  TEST_CASE("uniform logits give log vocabulary size") {
    for (bool tied : {false, true}) {
      TranslationModel<double> m(tiny(tied), 20, 30, 5);
      zero_param(m.params(), tied ? "tgt_embed" : "tgt_out");
      zero_param(m.params(), "src_out");
      Rng rng(2);
      std::vector<TokenPair> batch;
      for (int i = 0; i < 4; ++i) batch.push_back({random_sentence(rng, 20, 1, 8), random_sentence(rng, 30, 1, 8)});
      std::vector<TokenPair> flipped;
      for (const auto& p : batch) flipped.push_back({p.target, p.source});
      Graph<double> g(std::as_const(m).params());
      CHECK(g.value(m.forward_loss(g, batch)).item() == doctest::Approx(std::log(30.0)).epsilon(1e-12));
      CHECK(g.value(m.forward_loss(g, flipped, Direction::Backward)).item() ==
            doctest::Approx(std::log(20.0)).epsilon(1e-12));
    }
  }

  TEST_CASE("batch loss equals token-weighted per-sentence losses") {
    const TranslationModel<double> m(tiny(), 20, 30, 6);
    Rng rng(3);
    std::vector<TokenPair> batch;
    for (int i = 0; i < 5; ++i) batch.push_back({random_sentence(rng, 20, 1, 8), random_sentence(rng, 30, 1, 8)});
    Graph<double> g(std::as_const(m).params());
    const double joint = g.value(m.forward_loss(g, batch)).item();
    double weighted = 0.0, tokens = 0.0;
    for (const auto& p : batch) {
      Graph<double> gi(std::as_const(m).params());
      const double n = static_cast<double>(p.target.size() + 1);
      weighted += n * gi.value(m.forward_loss(gi, std::vector<TokenPair>{p})).item();
      tokens += n;
    }
    CHECK(joint == doctest::Approx(weighted / tokens).epsilon(1e-12));
  }

  TEST_CASE("length limits") {
    const TranslationModel<float> m(tiny(), 20, 30, 7);
    Graph<float> g(std::as_const(m).params());
    CHECK_THROWS_AS(m.encode(g, {std::vector<int>(17, 10)}), ValidationError);
    CHECK_THROWS_AS(m.encode(g, {std::vector<int>{}}), ValidationError);
    // A target of max_len tokens frames to max_len + 1 decoder positions.
    const std::vector<TokenPair> over{{{10}, std::vector<int>(16, 10)}};
    CHECK_THROWS_AS(m.forward_loss(g, over), ValidationError);
  }

  TEST_CASE("memorizes ten pairs") {
    TranslationModel<float> m(tiny(), 20, 30, 8);
    Rng rng(4);
    std::vector<TokenPair> pairs;
    for (int i = 0; i < 10; ++i) pairs.push_back({random_sentence(rng, 20, 3, 6), random_sentence(rng, 30, 3, 6)});
    double loss = 0.0;
    for (std::uint64_t step = 1; step <= 500; ++step) {
      Graph<float> g(m.params());
      const Var l = m.forward_loss(g, pairs);
      loss = g.value(l).item();
      g.backward(l);
      clip_grad_norm(m.params(), 1.0);
      adam_step(m.params(), warmup_inverse_sqrt(step, 3e-3, 50));
    }
    CHECK(loss < 0.1);
  }

  TEST_CASE("scorer rows are the decoder's next-token distribution") {
    const TranslationModel<double> m(tiny(), 20, 30, 9);
    const std::vector<int> src{10, 11, 12};
    const std::vector<int> prefix{14, 15};
    TranslationScorer<double> scorer(m, src);
    const auto rows = scorer.next_log_probs({prefix});
    const auto first = scorer.next_log_probs({{}});
    Graph<double> g(std::as_const(m).params());
    const auto enc = m.encode(g, {src});
    const auto logits = g.value(m.decode(g, enc, {decoder_input(prefix)}));
    const auto lp = log_softmax_rows(logits);
    for (std::size_t w = 0; w < 30; ++w) CHECK(rows[0][w] == doctest::Approx(lp.at(2, w)).epsilon(1e-12));
    for (std::size_t w = 0; w < 30; ++w) CHECK(first[0][w] == doctest::Approx(lp.at(0, w)).epsilon(1e-12));
  }

  TEST_CASE("beam of one is greedy") {
    Rng rng(5);
    for (std::uint64_t seed = 10; seed < 15; ++seed) {
      const TranslationModel<float> m(tiny(), 20, 30, seed);
      const auto src = random_sentence(rng, 20, 2, 8);
      BeamOptions opt;
      opt.beam_size = 1;
      opt.top_k = 1;
      opt.max_len = 10;
      const auto beam = translate_beam(m, src, opt);
      TranslationScorer<float> scorer(m, src);
      const auto greedy = greedy_search(scorer, kEos, 10);
      REQUIRE(beam.size() == 1);
      CHECK(beam[0].tokens == greedy.tokens);
      auto batched = greedy_translate(m, {src}, 10);
      auto expected = greedy.tokens;
      if (!expected.empty() && expected.back() == kEos) expected.pop_back();
      CHECK(batched[0] == expected);
    }
  }

  TEST_CASE("top-k scores are non-increasing") {
    const TranslationModel<float> m(tiny(), 20, 30, 16);
    BeamOptions opt;
    opt.top_k = 3;
    opt.max_len = 8;
    const auto hyps = translate_beam(m, {10, 12, 14}, opt);
    REQUIRE(hyps.size() == 3);
    for (std::size_t i = 1; i < hyps.size(); ++i) CHECK(hyps[i - 1].score() >= hyps[i].score());
    for (const auto& h : hyps) CHECK(h.tokens.size() <= 8);
  }

  TEST_CASE("empty source decodes to end of sentence") {
    const TranslationModel<float> m(tiny(), 20, 30, 17);
    const auto hyps = translate_beam(m, {}, BeamOptions{});
    REQUIRE(hyps.size() == 1);
    CHECK(hyps[0].tokens == std::vector<int>{kEos});
  }
}

TEST_SUITE("beam-search") {
  TEST_CASE("matches exhaustive enumeration on toy models") {
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
      oracle::ToyScorer model(4, seed);
      BeamOptions opt{64, 1, 3, 2};
      const auto beam = beam_search(model, opt);
      const auto best = oracle::exhaustive_best(model, 4, 2, 3);
      REQUIRE(beam.size() == 1);
      CHECK(beam[0].tokens == best.tokens);
      CHECK(beam[0].log_prob == doctest::Approx(best.log_prob).epsilon(1e-12));
    }
  }

  TEST_CASE("peaked toy models are solved by a beam of five") {
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
      oracle::ToyScorer model(4, seed, 0.9);
      const auto beam = beam_search(model, BeamOptions{5, 1, 3, 2});
      CHECK(beam[0].tokens == oracle::exhaustive_best(model, 4, 2, 3).tokens);
    }
  }

  TEST_CASE("finished hypotheses end in EOS or at max_len") {
    oracle::ToyScorer model(4, 99);
    const auto hyps = beam_search(model, BeamOptions{5, 5, 3, 2});
    for (const auto& h : hyps) {
      CHECK(h.finished);
      CHECK((h.tokens.back() == 2 || h.tokens.size() == 3));
    }
  }

  TEST_CASE("option validation") {
    oracle::ToyScorer model(4, 1);
    CHECK_THROWS_AS(beam_search(model, BeamOptions{2, 3, 3, 2}), ValidationError);
    CHECK_THROWS_AS(beam_search(model, BeamOptions{2, 0, 3, 2}), ValidationError);
    CHECK_THROWS_AS(beam_search(model, BeamOptions{2, 1, 0, 2}), ValidationError);
  }
}
