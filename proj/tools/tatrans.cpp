// tatrans: command-line front end for corpus handling, training, decoding,
// reranking and evaluation.

#include <filesystem>
#include <iostream>
#include <iterator>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "tatrans/corpus.hpp"
#include "tatrans/digest.hpp"
#include "tatrans/error.hpp"
#include "tatrans/pipeline.hpp"
#include "tatrans/synthetic.hpp"

using namespace tatrans;
namespace fs = std::filesystem;

namespace {

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string f;
  while (std::getline(ss, f, '\t')) out.push_back(f);
  if (!line.empty() && line.back() == '\t') out.emplace_back();
  return out;
}

std::vector<std::string> read_lines(const std::string& path) {
  std::string text;
  if (path.empty() || path == "-") {
    text.assign(std::istreambuf_iterator<char>(std::cin), {});
  } else {
    text = read_text_file(path);
  }
  std::vector<std::string> lines;
  std::stringstream ss(text);
  std::string line;
  while (std::getline(ss, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  return lines;
}

void emit(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
  } else {
    write_text_file(path, text);
  }
}

// Options shared by the subcommands that build a RunConfig.
struct ConfigFlags {
  std::string config_path;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  std::string work_dir, labels, parallel, mono_a, mono_m;
  std::optional<std::size_t> beam_size, top_k;

  void attach(CLI::App* app) {
    app->add_option("--config", config_path, "Run configuration (JSON)");
    app->add_option("--set", sets, "Override a config key, e.g. --set mt_schedule.epochs=10 (repeatable)");
    app->add_option("--seed", seed, "Run seed (default 1)");
    app->add_option("--work-dir", work_dir, "Work directory (default work)");
    app->add_option("--labels", labels, "Chronology labels, comma separated (default pre-qin,han,song)");
    app->add_option("--parallel", parallel, "Parallel TSV: ancient<TAB>modern[<TAB>label]");
    app->add_option("--mono-a", mono_a, "Ancient monolingual text, one sentence per line");
    app->add_option("--mono-m", mono_m, "Modern monolingual text, one sentence per line");
    app->add_option("--beam-size", beam_size, "Beam size (default 5)");
    app->add_option("--top-k", top_k, "Candidates kept for reranking (default 5)");
  }

  RunConfig resolve() const {
    nlohmann::json j = RunConfig().to_json();
    if (!config_path.empty()) {
      nlohmann::json file;
      try {
        file = nlohmann::json::parse(read_text_file(config_path));
      } catch (const nlohmann::json::parse_error& e) {
        throw ValidationError(config_path + ": " + e.what());
      }
      RunConfig::from_json(file);  // rejects unknown keys before merging
      j.merge_patch(file);
    }
    if (seed) j["seed"] = *seed;
    if (!work_dir.empty()) j["work_dir"] = work_dir;
    if (!labels.empty()) j["labels"] = LabelSet::parse(labels).names();
    if (!parallel.empty()) j["data"]["parallel"] = parallel;
    if (!mono_a.empty()) j["data"]["mono_a"] = mono_a;
    if (!mono_m.empty()) j["data"]["mono_m"] = mono_m;
    if (beam_size) j["decode"]["beam_size"] = *beam_size;
    if (top_k) j["decode"]["top_k"] = *top_k;
    for (const auto& s : sets) RunConfig::apply_override(j, s);
    return RunConfig::from_json(j);
  }
};

int run_stages(const ConfigFlags& flags, const std::set<Stage>& stages) {
  const RunConfig config = flags.resolve();
  PipelineOptions opts;
  opts.log = &std::cerr;
  run_pipeline(config, stages, opts);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Time-aware ancient-to-modern Chinese translation with chronology inference.\n"
               "Text is tokenized by character. Decoding defaults: beam size 5, top 5 candidates reranked."};
  app.require_subcommand(1);

  // corpus stats / split
  auto* corpus = app.add_subcommand("corpus", "Inspect or split corpora");
  corpus->require_subcommand(1);
  std::string stats_parallel, stats_mono, stats_side = "zh-m", corpus_labels = "pre-qin,han,song";
  auto* stats_cmd = corpus->add_subcommand("stats", "Sentence and character counts as JSON");
  stats_cmd->add_option("--parallel", stats_parallel, "Parallel TSV");
  stats_cmd->add_option("--mono", stats_mono, "Monolingual text file");
  stats_cmd->add_option("--side", stats_side, "Side of --mono: zh-a or zh-m")->capture_default_str();
  stats_cmd->add_option("--labels", corpus_labels, "Chronology labels")->capture_default_str();

  std::string split_input, split_out;
  double dev_frac = 0.1, test_frac = 0.1;
  std::uint64_t split_seed = 1;
  bool stratify = false;
  auto* split_cmd = corpus->add_subcommand("split", "Random dev/test split of labeled examples");
  split_cmd->add_option("--input", split_input, "Parallel TSV")->required();
  split_cmd->add_option("--out-dir", split_out, "Writes train.tsv, dev.tsv, test.tsv, split_manifest.json")->required();
  split_cmd->add_option("--dev-frac", dev_frac, "Dev fraction")->capture_default_str();
  split_cmd->add_option("--test-frac", test_frac, "Test fraction")->capture_default_str();
  split_cmd->add_option("--seed", split_seed, "Split seed")->capture_default_str();
  split_cmd->add_option("--labels", corpus_labels, "Chronology labels")->capture_default_str();
  split_cmd->add_flag("--stratify", stratify, "Apply the fractions per label");

  // gen-synthetic
  std::string syn_out, syn_labels = "pre-qin,han,song";
  std::uint64_t syn_seed = 1;
  SyntheticShape shape;
  SyntheticConfig syn_counts;
  auto* gen = app.add_subcommand("gen-synthetic", "Generate an era-marked synthetic corpus");
  gen->add_option("--out-dir", syn_out, "Writes parallel.tsv, mono_a.txt, mono_m.txt, synthetic_config.json")->required();
  gen->add_option("--seed", syn_seed, "Generator seed")->capture_default_str();
  gen->add_option("--labels", syn_labels, "One era per label")->capture_default_str();
  gen->add_option("--n-parallel", syn_counts.n_parallel, "Labeled parallel pairs")->capture_default_str();
  gen->add_option("--n-unlabeled", syn_counts.n_unlabeled, "Unlabeled parallel pairs")->capture_default_str();
  gen->add_option("--n-mono-a", syn_counts.n_mono_a, "Ancient monolingual sentences")->capture_default_str();
  gen->add_option("--n-mono-m", syn_counts.n_mono_m, "Modern monolingual sentences")->capture_default_str();
  gen->add_option("--content-size", shape.content_size, "Content characters")->capture_default_str();
  gen->add_option("--shift-fraction", shape.shift_fraction, "Share of characters translated differently per era")
      ->capture_default_str();
  gen->add_option("--marker-rate", shape.marker_rate, "Per-position era marker probability")->capture_default_str();

  // pipeline stages
  ConfigFlags run_flags, mt_flags, lm_flags, ft_flags;
  std::string stage_list;
  auto* run = app.add_subcommand("run", "Run pipeline stages (default: all)");
  run_flags.attach(run);
  run->add_option("--stages", stage_list,
                  "Comma-separated subset of prep,train-mt,train-lm,finetune-lm,translate,rerank,evaluate");
  auto* train_mt = app.add_subcommand("train-mt", "Pipeline stage: train the translation model");
  mt_flags.attach(train_mt);
  auto* train_lm = app.add_subcommand("train-lm", "Pipeline stage: pretrain the language model on modern text");
  lm_flags.attach(train_lm);
  auto* finetune_lm = app.add_subcommand("finetune-lm", "Pipeline stage: fine-tune the language model on queries");
  ft_flags.attach(finetune_lm);

  // translate
  std::string tr_model, tr_input, tr_output;
  DecodeConfig tr_decode;
  bool tr_nbest = false;
  auto* translate = app.add_subcommand("translate", "Translate sentences, one per line");
  translate->add_option("--model", tr_model, "Translation checkpoint")->required();
  translate->add_option("--input", tr_input, "Input file (default: standard input)");
  translate->add_option("--output", tr_output, "Output file (default: standard output)");
  translate->add_option("--beam-size", tr_decode.beam_size, "Beam size")->capture_default_str();
  translate->add_option("--top-k", tr_decode.top_k, "Candidates written with --nbest")->capture_default_str();
  translate->add_option("--max-len", tr_decode.max_len, "Maximum output tokens")->capture_default_str();
  translate->add_flag("--nbest", tr_nbest, "Write top-k candidates with scores as TSV instead of top-1 text");

  // score
  std::string sc_lm, sc_input, sc_output;
  auto* score_cmd = app.add_subcommand("score", "Score (ancient, modern, label) triples with the language model");
  score_cmd->add_option("--lm", sc_lm, "Language model checkpoint")->required();
  score_cmd->add_option("--input", sc_input, "TSV: ancient<TAB>modern<TAB>label (default: standard input)");
  score_cmd->add_option("--output", sc_output, "Output TSV (default: standard output)");

  // rerank
  std::string rr_lm, rr_input, rr_output, rr_grid, rr_criterion = "per_token_nll";
  auto* rerank_cmd = app.add_subcommand("rerank", "Pick the best candidate and chronology label per source");
  rerank_cmd->add_option("--lm", rr_lm, "Fine-tuned language model checkpoint")->required();
  rerank_cmd->add_option("--input", rr_input, "TSV: source<TAB>candidate_1<TAB>...<TAB>candidate_k");
  rerank_cmd->add_option("--output", rr_output, "TSV: source, best_modern, best_label, per_token_nll");
  rerank_cmd->add_option("--grid-out", rr_grid, "Also write every candidate/label score");
  rerank_cmd->add_option("--criterion", rr_criterion, "per_token_nll or total_nll")->capture_default_str();

  // evaluate
  std::string ev_hyp, ev_ref, ev_labels_file, ev_gold, ev_pred, ev_out, ev_labels = "pre-qin,han,song";
  auto* evaluate = app.add_subcommand("evaluate", "BLEU and chronology classification reports");
  evaluate->add_option("--hyp", ev_hyp, "Hypotheses, one per line")->required();
  evaluate->add_option("--ref", ev_ref, "References, one per line")->required();
  evaluate->add_option("--example-labels", ev_labels_file, "Per-example label for per-label BLEU");
  evaluate->add_option("--gold", ev_gold, "Gold chronology labels, one per line");
  evaluate->add_option("--pred", ev_pred, "Predicted chronology labels, one per line");
  evaluate->add_option("--out-dir", ev_out, "Writes report.txt, report.json, confusion_chronology.csv")->required();
  evaluate->add_option("--labels", ev_labels, "Label set")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    if (stats_cmd->parsed()) {
      const LabelSet labels = LabelSet::parse(corpus_labels);
      if (stats_parallel.empty() == stats_mono.empty()) throw ValidationError("give exactly one of --parallel or --mono");
      const CorpusStats s = stats_parallel.empty() ? stats(load_mono(stats_mono, parse_side(stats_side)))
                                                   : stats(load_parallel(stats_parallel, labels));
      std::cout << to_json(s).dump(2) << "\n";
    } else if (split_cmd->parsed()) {
      const LabelSet labels = LabelSet::parse(corpus_labels);
      const auto examples = load_parallel(split_input, labels);
      const auto parts = split(examples, dev_frac, test_frac, split_seed, stratify);
      fs::create_directories(split_out);
      const fs::path out(split_out);
      save_parallel(out / "train.tsv", parts.train);
      save_parallel(out / "dev.tsv", parts.dev);
      save_parallel(out / "test.tsv", parts.test);
      nlohmann::json m = {{"seed", split_seed},
                          {"dev_frac", dev_frac},
                          {"test_frac", test_frac},
                          {"stratify", stratify},
                          {"labels", labels.names()},
                          {"input", {{"path", split_input}, {"digest", digest_file(split_input)}}},
                          {"outputs",
                           {{"train.tsv", digest_file(out / "train.tsv")},
                            {"dev.tsv", digest_file(out / "dev.tsv")},
                            {"test.tsv", digest_file(out / "test.tsv")}}},
                          {"counts", {{"train", parts.train.size()}, {"dev", parts.dev.size()}, {"test", parts.test.size()}}}};
      write_text_file(out / "split_manifest.json", m.dump(2) + "\n");
      std::cerr << "train " << parts.train.size() << ", dev " << parts.dev.size() << ", test " << parts.test.size() << "\n";
    } else if (gen->parsed()) {
      const LabelSet labels = LabelSet::parse(syn_labels);
      SyntheticConfig cfg = make_synthetic_config(labels, shape, syn_seed);
      cfg.n_parallel = syn_counts.n_parallel;
      cfg.n_unlabeled = syn_counts.n_unlabeled;
      cfg.n_mono_a = syn_counts.n_mono_a;
      cfg.n_mono_m = syn_counts.n_mono_m;
      const auto corpus_out = gen_synthetic(cfg, syn_seed);
      fs::create_directories(syn_out);
      const fs::path out(syn_out);
      save_parallel(out / "parallel.tsv", corpus_out.parallel);
      save_mono(out / "mono_a.txt", corpus_out.mono_a);
      save_mono(out / "mono_m.txt", corpus_out.mono_m);
      nlohmann::json j = to_json(cfg);
      j["seed"] = syn_seed;
      write_text_file(out / "synthetic_config.json", j.dump(2) + "\n");
    } else if (run->parsed()) {
      std::set<Stage> stages;
      if (stage_list.empty()) {
        stages.insert(all_stages().begin(), all_stages().end());
      } else {
        std::stringstream ss(stage_list);
        std::string name;
        while (std::getline(ss, name, ',')) stages.insert(parse_stage_name(name));
      }
      return run_stages(run_flags, stages);
    } else if (train_mt->parsed()) {
      return run_stages(mt_flags, {Stage::TrainMt});
    } else if (train_lm->parsed()) {
      return run_stages(lm_flags, {Stage::TrainLm});
    } else if (finetune_lm->parsed()) {
      return run_stages(ft_flags, {Stage::FinetuneLm});
    } else if (translate->parsed()) {
      const auto mt = load_mt(tr_model);
      if (!tr_nbest) tr_decode.top_k = std::min(tr_decode.top_k, tr_decode.beam_size);
      const auto nbest = translate_nbest(mt, read_lines(tr_input), tr_decode);
      std::string text;
      if (tr_nbest) {
        text = format_nbest(nbest);
      } else {
        for (const auto& e : nbest) {
          if (e.rank == 0) text += e.candidate + "\n";
        }
      }
      emit(tr_output, text);
    } else if (score_cmd->parsed()) {
      const auto lm = load_lm(sc_lm);
      std::string text;
      if (lm.model->stage != LMStage::Finetuned) {
        text += std::string("# lm stage: ") + stage_name(lm.model->stage) + " (not fine-tuned)\n";
        std::cerr << "warning: scoring with a language model that is not fine-tuned\n";
      }
      text += "ancient\tmodern\tlabel\ttotal_nll\ttoken_count\tper_token_nll\n";
      std::vector<std::vector<int>> queries;
      std::vector<std::vector<std::string>> rows;
      std::size_t line_no = 0;
      for (const auto& line : read_lines(sc_input)) {
        ++line_no;
        if (line.empty()) continue;
        auto f = split_fields(line);
        if (f.size() != 3) throw ValidationError("score input line " + std::to_string(line_no) + ": expected 3 fields");
        queries.push_back(build_query({f[0], f[1], f[2]}, lm.joint));
        rows.push_back(std::move(f));
      }
      const auto scores = lm.model->score_batch(queries);
      for (std::size_t i = 0; i < rows.size(); ++i) {
        text += rows[i][0] + "\t" + rows[i][1] + "\t" + rows[i][2] + "\t" + format_double(scores[i].total_nll) + "\t" +
                std::to_string(scores[i].token_count) + "\t" + format_double(scores[i].per_token_nll) + "\n";
      }
      emit(sc_output, text);
    } else if (rerank_cmd->parsed()) {
      const auto lm = load_lm(rr_lm);
      if (lm.model->stage != LMStage::Finetuned) std::cerr << "warning: reranking with a language model that is not fine-tuned\n";
      RerankCriterion criterion;
      if (rr_criterion == "per_token_nll") {
        criterion = RerankCriterion::PerTokenNll;
      } else if (rr_criterion == "total_nll") {
        criterion = RerankCriterion::TotalNll;
      } else {
        throw ValidationError("unknown criterion '" + rr_criterion + "'");
      }
      std::string text = "source\tbest_modern\tbest_label\tper_token_nll\n";
      std::string grid = "source\tbeam_rank\tlabel\tvalid\ttotal_nll\ttoken_count\tper_token_nll\tcandidate\n";
      std::size_t line_no = 0;
      for (const auto& line : read_lines(rr_input)) {
        ++line_no;
        if (line.empty()) continue;
        const auto f = split_fields(line);
        if (f.size() < 2) throw ValidationError("rerank input line " + std::to_string(line_no) + ": no candidates");
        const std::vector<std::string> cands(f.begin() + 1, f.end());
        const auto r = rerank(*lm.model, lm.joint, f[0], cands, lm.joint.labels(), criterion);
        text += f[0] + "\t" + r.best.modern + "\t" + r.best.label + "\t" + format_double(r.best.lm_score.per_token_nll) + "\n";
        for (const auto& c : r.grid) {
          grid += f[0] + "\t" + std::to_string(c.beam_rank) + "\t" + c.label + "\t" + (c.valid ? "1" : "0") + "\t" +
                  format_double(c.lm_score.total_nll) + "\t" + std::to_string(c.lm_score.token_count) + "\t" +
                  format_double(c.lm_score.per_token_nll) + "\t" + c.modern + "\n";
        }
      }
      emit(rr_output, text);
      if (!rr_grid.empty()) write_text_file(rr_grid, grid);
    } else if (evaluate->parsed()) {
      const LabelSet labels = LabelSet::parse(ev_labels);
      const auto hyp = read_lines(ev_hyp);
      const auto ref = read_lines(ev_ref);
      const auto ex_labels = ev_labels_file.empty() ? std::vector<std::string>{} : read_lines(ev_labels_file);
      EvaluationReport report;
      report.bleu.emplace_back("system", bleu(hyp, ref, ex_labels, &labels));
      if (ev_gold.empty() != ev_pred.empty()) throw ValidationError("--gold and --pred go together");
      if (!ev_gold.empty()) {
        report.classification.emplace_back("chronology",
                                           classification_metrics(read_lines(ev_gold), read_lines(ev_pred), labels));
      }
      write_reports(report, ev_out);
      std::cout << format_text(report);
    }
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const DivergenceError& e) {
    std::cerr << "diverged: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
