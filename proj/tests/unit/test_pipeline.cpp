#include <sstream>

#include "doctest.h"
#include "support/temp_dir.hpp"
#include "support/tiny_run.hpp"
#include "tatrans/error.hpp"
#include "tatrans/pipeline.hpp"

using namespace tatrans;
namespace fs = std::filesystem;

TEST_SUITE("cli-pipeline") {
  TEST_CASE("config json round trip") {
    RunConfig c;
    c.seed = 9;
    c.mt.num_layers = 3;
    c.lm.context = 99;
    c.decode.top_k = 2;
    c.criterion = RerankCriterion::TotalNll;
    c.stratify = true;
    const auto back = RunConfig::from_json(c.to_json());
    CHECK(back.to_json() == c.to_json());
    CHECK(back.digest() == c.digest());
    RunConfig d = c;
    d.seed = 10;
    CHECK(d.digest() != c.digest());
  }

  TEST_CASE("unknown keys are rejected") {
    auto j = RunConfig().to_json();
    j["mt"]["layers"] = 2;
    CHECK_THROWS_AS(RunConfig::from_json(j), ValidationError);
    auto k = RunConfig().to_json();
    k["colour"] = "red";
    CHECK_THROWS_AS(RunConfig::from_json(k), ValidationError);
  }

  TEST_CASE("overrides") {
    auto j = RunConfig().to_json();
    RunConfig::apply_override(j, "mt.num_layers=3");
    RunConfig::apply_override(j, "work_dir=out/run");
    RunConfig::apply_override(j, "decode.beam_size=7");
    const auto c = RunConfig::from_json(j);
    CHECK(c.mt.num_layers == 3);
    CHECK(c.work_dir == "out/run");
    CHECK(c.decode.beam_size == 7);
    CHECK_THROWS_AS(RunConfig::apply_override(j, "no-equals-sign"), ValidationError);
  }

  TEST_CASE("validation") {
    RunConfig c;
    c.parallel_path = "x.tsv";
    CHECK_NOTHROW(c.validate());
    c.decode.top_k = c.decode.beam_size + 1;
    CHECK_THROWS_AS(c.validate(), ValidationError);
    c = RunConfig();
    c.dev_frac = 0.7;
    c.test_frac = 0.4;
    CHECK_THROWS_AS(c.validate(), ValidationError);
    c = RunConfig();
    c.labels = {};
    CHECK_THROWS_AS(c.validate(), ValidationError);
  }

  TEST_CASE("stage names") {
    for (auto s : all_stages()) CHECK(parse_stage_name(stage_name(s)) == s);
    CHECK_THROWS_AS(parse_stage_name("train"), ValidationError);
  }

  TEST_CASE("nbest format round trip") {
    const std::vector<NBestEntry> entries{{0, "天地", 0, -0.25, -1.0, "玄黄"}, {0, "天地", 1, -0.5, -2.5, ""},
                                          {1, "日月", 0, -0.125, -0.375, "盈昃"}};
    const auto back = parse_nbest(format_nbest(entries));
    REQUIRE(back.size() == entries.size());
    for (std::size_t i = 0; i < back.size(); ++i) {
      CHECK(back[i].index == entries[i].index);
      CHECK(back[i].source == entries[i].source);
      CHECK(back[i].rank == entries[i].rank);
      CHECK(back[i].score == entries[i].score);
      CHECK(back[i].log_prob == entries[i].log_prob);
      CHECK(back[i].candidate == entries[i].candidate);
    }
    CHECK_THROWS_AS(parse_nbest("index\tsource\n0\tonly"), ValidationError);
  }

  TEST_CASE("model files are self-contained") {
    testutil::TempDir dir("models");
    const auto labels = LabelSet::standard();
    const auto src = Vocabulary::build({"天地玄黄"}, labels);
    const auto tgt = Vocabulary::build({"宇宙洪荒日月"}, labels);
    TransformerConfig mc;
    mc.num_layers = 1;
    mc.model_dim = 16;
    mc.ffn_dim = 32;
    mc.num_heads = 2;
    const TranslationModel<float> mt(mc, src.size(), tgt.size(), 4);
    save_mt(dir / "mt.ckpt", mt, src, tgt, "abc");
    const auto a = load_mt(dir / "mt.ckpt");
    CHECK(a.source.serialize() == src.serialize());
    CHECK(a.target.serialize() == tgt.serialize());
    CHECK(a.model->config().to_json() == mc.to_json());
    CHECK(a.model->params()[0].value.data == mt.params()[0].value.data);

    LMConfig lc;
    lc.num_layers = 1;
    lc.model_dim = 16;
    lc.ffn_dim = 32;
    lc.num_heads = 2;
    LanguageModel<float> lm(lc, src.size(), 5);
    lm.stage = LMStage::Pretrained;
    save_lm(dir / "lm.ckpt", lm, src, "abc");
    const auto b = load_lm(dir / "lm.ckpt");
    CHECK(b.model->stage == LMStage::Pretrained);
    CHECK(b.joint.serialize() == src.serialize());
    CHECK(b.model->score({8, 9, kEos}).total_nll == lm.score({8, 9, kEos}).total_nll);
    CHECK_THROWS(load_lm(dir / "mt.ckpt"));
  }

  TEST_CASE("tiny end-to-end run") {
    testutil::TempDir dir("pipeline");
    const auto files = testutil::write_synthetic(dir.path(), 80, 60, 60, 3);
    const auto cfg = testutil::tiny_run(files, dir / "work");
    const WorkLayout w{dir / "work"};

    // Later stages refuse to run before their inputs exist.
    try {
      run_pipeline(cfg, {Stage::TrainMt});
      FAIL("expected an error");
    } catch (const ValidationError& e) {
      CHECK(std::string(e.what()).find("run stage 'prep' first") != std::string::npos);
    }

    std::ostringstream log;
    run_pipeline(cfg, {all_stages().begin(), all_stages().end()}, {&log});
    for (const auto& p : {w.train(), w.dev(), w.test(), w.stats(), w.joint_vocab(), w.mt_model(), w.mt_metrics(),
                          w.lm_pretrained(), w.lm_finetuned(), w.nbest(), w.top1(), w.reranked(), w.grid(),
                          w.chronology_reference(), w.report_dir() / "report.json", w.report_dir() / "report.txt"}) {
      CAPTURE(p);
      CHECK(fs::exists(p));
    }
    const auto manifest = nlohmann::json::parse(read_text_file(w.manifest()));
    CHECK(manifest["config_digest"] == cfg.digest());
    for (auto s : all_stages()) CHECK(manifest["stages"].contains(stage_name(s)));

    const auto test = load_parallel(w.test(), LabelSet::standard());
    const auto nbest = parse_nbest(read_text_file(w.nbest()));
    CHECK(nbest.size() <= test.size() * cfg.decode.top_k);
    CHECK(nbest.size() >= test.size());

    const auto report = evaluation_report_from_json(nlohmann::json::parse(read_text_file(w.report_dir() / "report.json")));
    REQUIRE(report.bleu.size() == 2);
    CHECK(report.bleu[0].second.sentences == test.size());
    REQUIRE(report.classification.size() == 2);
    CHECK(report.classification[0].second.total == test.size());
    CHECK(log.str().find("[evaluate]") != std::string::npos);

    fs::remove(w.lm_finetuned());
    try {
      run_pipeline(cfg, {Stage::Rerank});
      FAIL("expected an error");
    } catch (const ValidationError& e) {
      CHECK(std::string(e.what()).find("run stage 'finetune-lm' first") != std::string::npos);
    }
  }
}
