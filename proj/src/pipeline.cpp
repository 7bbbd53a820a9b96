#include "tatrans/pipeline.hpp"

#include <cstdio>
#include <map>
#include <ostream>
#include <sstream>

#include "tatrans/checkpoint.hpp"
#include "tatrans/digest.hpp"
#include "tatrans/error.hpp"

namespace tatrans {

namespace fs = std::filesystem;

namespace {

void check_keys(const nlohmann::json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object()) throw ValidationError(where + " must be an object");
  for (const auto& [key, _] : j.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || key == a;
    if (!ok) throw ValidationError("unknown key '" + key + "' in " + where);
  }
}

template <typename V>
void read_into(const nlohmann::json& j, const char* key, V& out) {
  if (j.contains(key)) out = j.at(key).get<V>();
}

std::vector<std::string> split_tabs(std::string_view line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto tab = line.find('\t', start);
    out.emplace_back(line.substr(start, tab == std::string_view::npos ? std::string_view::npos : tab - start));
    if (tab == std::string_view::npos) break;
    start = tab + 1;
  }
  return out;
}

std::vector<std::string> lines_of(std::string_view text) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start < text.size()) {
    auto nl = text.find('\n', start);
    if (nl == std::string_view::npos) nl = text.size();
    std::string line(text.substr(start, nl - start));
    if (!line.empty() && line.back() == '\r') line.pop_back();
    out.push_back(std::move(line));
    start = nl + 1;
  }
  return out;
}

const char* criterion_name(RerankCriterion c) { return c == RerankCriterion::PerTokenNll ? "per_token_nll" : "total_nll"; }

RerankCriterion parse_criterion(const std::string& s) {
  if (s == "per_token_nll") return RerankCriterion::PerTokenNll;
  if (s == "total_nll") return RerankCriterion::TotalNll;
  throw ValidationError("unknown rerank criterion '" + s + "' (expected per_token_nll or total_nll)");
}

class Runner {
 public:
  Runner(const RunConfig& config, const PipelineOptions& options)
      : config_(config), labels_(config.labels), layout_{config.work_dir}, options_(options) {
    config_.mt_schedule.seed = Rng::derive(config.seed, 1);
    config_.pretrain.seed = Rng::derive(config.seed, 2);
    config_.finetune.seed = Rng::derive(config.seed, 3);
    digest_ = config.digest();
  }

  void run(Stage s) {
    log() << "[" << stage_name(s) << "]\n";
    switch (s) {
      case Stage::Prep: prep(); break;
      case Stage::TrainMt: train_mt(); break;
      case Stage::TrainLm: train_lm_stage(); break;
      case Stage::FinetuneLm: finetune_lm(); break;
      case Stage::Translate: translate(); break;
      case Stage::Rerank: rerank_stage(); break;
      case Stage::Evaluate: evaluate(); break;
    }
    record(s);
  }

 private:
  std::ostream& log() { return options_.log ? *options_.log : null_log_; }

  void require(Stage needed, const fs::path& p, Stage by) const {
    if (!fs::exists(p)) {
      throw ValidationError(std::string("stage '") + stage_name(by) + "' needs " + p.string() + "; run stage '" +
                            stage_name(needed) + "' first");
    }
  }

  void prep() {
    if (config_.parallel_path.empty()) throw ValidationError("prep needs a parallel corpus path");
    const auto examples = load_parallel(config_.parallel_path, labels_);
    const auto parts = split(examples, config_.dev_frac, config_.test_frac, config_.seed, config_.stratify);
    fs::create_directories(layout_.root / "data");
    fs::create_directories(layout_.root / "vocab");
    save_parallel(layout_.train(), parts.train);
    save_parallel(layout_.dev(), parts.dev);
    save_parallel(layout_.test(), parts.test);
    const MonoCorpus mono_a =
        config_.mono_a_path.empty() ? MonoCorpus{Side::Ancient, {}} : load_mono(config_.mono_a_path, Side::Ancient);
    const MonoCorpus mono_m =
        config_.mono_m_path.empty() ? MonoCorpus{Side::Modern, {}} : load_mono(config_.mono_m_path, Side::Modern);
    save_mono(layout_.mono_a(), mono_a);
    save_mono(layout_.mono_m(), mono_m);

    std::vector<std::string> src, tgt, joint;
    for (const auto& e : parts.train) {
      src.push_back(e.source);
      tgt.push_back(e.target);
    }
    src.insert(src.end(), mono_a.sentences.begin(), mono_a.sentences.end());
    tgt.insert(tgt.end(), mono_m.sentences.begin(), mono_m.sentences.end());
    joint = src;
    joint.insert(joint.end(), tgt.begin(), tgt.end());
    Vocabulary::build(src, labels_, config_.min_freq).save(layout_.src_vocab());
    Vocabulary::build(tgt, labels_, config_.min_freq).save(layout_.tgt_vocab());
    Vocabulary::build(joint, labels_, config_.min_freq).save(layout_.joint_vocab());

    nlohmann::json st = {{"train", to_json(stats(parts.train))},
                         {"dev", to_json(stats(parts.dev))},
                         {"test", to_json(stats(parts.test))},
                         {"mono_a", to_json(stats(mono_a))},
                         {"mono_m", to_json(stats(mono_m))}};
    write_text_file(layout_.stats(), st.dump(2) + "\n");
    log() << "  train " << parts.train.size() << ", dev " << parts.dev.size() << ", test " << parts.test.size()
          << ", mono zh-a " << mono_a.sentences.size() << ", mono zh-m " << mono_m.sentences.size() << "\n";
  }

  std::pair<Vocabulary, Vocabulary> mt_vocabs(Stage by) const {
    require(Stage::Prep, layout_.joint_vocab(), by);
    if (config_.joint_vocab) {
      auto j = Vocabulary::load(layout_.joint_vocab());
      return {j, j};
    }
    return {Vocabulary::load(layout_.src_vocab()), Vocabulary::load(layout_.tgt_vocab())};
  }

  void train_mt() {
    require(Stage::Prep, layout_.train(), Stage::TrainMt);
    const auto [src_v, tgt_v] = mt_vocabs(Stage::TrainMt);
    const auto train = load_parallel(layout_.train(), labels_);
    const auto dev = load_parallel(layout_.dev(), labels_);
    TrainData data;
    for (const auto& e : train) data.parallel.push_back({src_v.encode(e.source), tgt_v.encode(e.target)});
    for (const auto& s : load_mono(layout_.mono_a(), Side::Ancient).sentences) data.mono_a.push_back(src_v.encode(s));
    for (const auto& s : load_mono(layout_.mono_m(), Side::Modern).sentences) data.mono_m.push_back(tgt_v.encode(s));

    TranslationModel<float> model(config_.mt, src_v.size(), tgt_v.size(), Rng::derive(config_.seed, 4));
    log() << "  translation model: " << model.parameter_count() << " parameters\n";
    fs::create_directories(layout_.mt_dir());
    TrainHooks<float> hooks;
    std::vector<std::vector<int>> dev_src;
    std::vector<std::string> dev_ref;
    for (const auto& e : dev) {
      dev_src.push_back(src_v.encode(e.source));
      dev_ref.push_back(e.target);
    }
    if (!dev.empty()) {
      hooks.dev_bleu = [&](const TranslationModel<float>& m) {
        std::vector<std::string> hyp;
        for (const auto& ids : greedy_translate(m, dev_src, config_.decode.max_len)) hyp.push_back(tgt_v.decode(ids));
        return bleu(hyp, dev_ref).bleu;
      };
    }
    hooks.checkpoint_dir = layout_.mt_dir();
    hooks.checkpoint_metadata = mt_metadata(config_.mt, src_v, tgt_v);
    hooks.config_digest = digest_;
    hooks.on_epoch = [&](const EpochMetrics& m) {
      char buf[200];
      std::snprintf(buf, sizeof buf, "  epoch %zu step %zu L_sup %.4f L_lm_A %.4f L_lm_M %.4f", m.epoch, m.step, m.l_sup,
                    m.l_lm_a, m.l_lm_m);
      log() << buf;
      if (m.dev_bleu) log() << " dev BLEU " << format_double(*m.dev_bleu);
      log() << "\n";
    };
    const auto result = tatrans::train(model, data, config_.objective, config_.mt_schedule, hooks);
    write_text_file(layout_.mt_metrics(), metrics_csv(result.epochs));
    save_mt(layout_.mt_model(), model, src_v, tgt_v, digest_);
    log() << "  selected epoch " << result.best_epoch << "\n";
  }

  LMHooks<float> lm_hooks(const Vocabulary& joint, LMStage stage, const fs::path& dir) {
    LMHooks<float> hooks;
    hooks.checkpoint_dir = dir;
    hooks.checkpoint_metadata = lm_metadata(config_.lm, joint, stage);
    hooks.config_digest = digest_;
    hooks.on_epoch = [this](const LMEpoch& e) {
      log() << "  epoch " << e.epoch << " step " << e.step << " loss " << format_double(e.train_loss);
      if (e.dev_perplexity) log() << " dev ppl " << format_double(*e.dev_perplexity);
      log() << "\n";
    };
    return hooks;
  }

  void train_lm_stage() {
    require(Stage::Prep, layout_.joint_vocab(), Stage::TrainLm);
    const auto joint = Vocabulary::load(layout_.joint_vocab());
    auto sentences = load_mono(layout_.mono_m(), Side::Modern).sentences;
    if (sentences.empty()) {
      for (const auto& e : load_parallel(layout_.train(), labels_)) sentences.push_back(e.target);
      log() << "  no modern monolingual corpus; pretraining on the training targets\n";
    }
    std::vector<std::string> dev;
    for (const auto& e : load_parallel(layout_.dev(), labels_)) dev.push_back(e.target);
    LanguageModel<float> lm(config_.lm, joint.size(), Rng::derive(config_.seed, 5));
    log() << "  language model: " << lm.parameter_count() << " parameters\n";
    fs::create_directories(layout_.lm_dir() / "pretrain");
    const auto r = tatrans::pretrain(lm, sentences, dev, joint, config_.pretrain,
                            lm_hooks(joint, LMStage::Pretrained, layout_.lm_dir() / "pretrain"));
    write_text_file(layout_.lm_dir() / "pretrain_metrics.csv", lm_csv(r));
    save_lm(layout_.lm_pretrained(), lm, joint, digest_);
  }

  void finetune_lm() {
    require(Stage::TrainLm, layout_.lm_pretrained(), Stage::FinetuneLm);
    auto art = load_lm(layout_.lm_pretrained());
    auto labeled = [&](const fs::path& p) {
      std::vector<ParallelExample> out;
      for (auto& e : load_parallel(p, labels_)) {
        if (e.label) out.push_back(std::move(e));
      }
      return out;
    };
    const auto train = labeled(layout_.train());
    const auto dev = labeled(layout_.dev());
    fs::create_directories(layout_.lm_dir() / "finetune");
    const auto r = tatrans::finetune(*art.model, train, dev, art.joint, config_.finetune,
                            lm_hooks(art.joint, LMStage::Finetuned, layout_.lm_dir() / "finetune"));
    write_text_file(layout_.lm_dir() / "finetune_metrics.csv", lm_csv(r));
    save_lm(layout_.lm_finetuned(), *art.model, art.joint, digest_);
  }

  void translate() {
    require(Stage::TrainMt, layout_.mt_model(), Stage::Translate);
    require(Stage::Prep, layout_.test(), Stage::Translate);
    const auto mt = load_mt(layout_.mt_model());
    std::vector<std::string> sources;
    for (const auto& e : load_parallel(layout_.test(), labels_)) sources.push_back(e.source);
    const auto nbest = translate_nbest(mt, sources, config_.decode);
    fs::create_directories(layout_.nbest().parent_path());
    write_text_file(layout_.nbest(), format_nbest(nbest));
    std::vector<std::string> top(sources.size());
    for (const auto& e : nbest) {
      if (e.rank == 0) top[e.index] = e.candidate;
    }
    std::string text;
    for (const auto& t : top) text += t + "\n";
    write_text_file(layout_.top1(), text);
  }

  void rerank_stage() {
    require(Stage::Translate, layout_.nbest(), Stage::Rerank);
    require(Stage::FinetuneLm, layout_.lm_finetuned(), Stage::Rerank);
    const auto lm = load_lm(layout_.lm_finetuned());
    const auto test = load_parallel(layout_.test(), labels_);
    const auto nbest = parse_nbest(read_text_file(layout_.nbest()));
    std::vector<std::vector<std::string>> cands(test.size());
    for (const auto& e : nbest) {
      if (e.index >= test.size()) throw ValidationError("n-best index " + std::to_string(e.index) + " beyond the test set");
      if (cands[e.index].size() != e.rank) throw ValidationError("n-best ranks out of order");
      cands[e.index].push_back(e.candidate);
    }
    std::string best_tsv = "index\tsource\tbest_modern\tbest_label\tper_token_nll\tbeam_rank\n";
    std::string grid_tsv = "index\tbeam_rank\tlabel\tvalid\ttotal_nll\ttoken_count\tper_token_nll\tcandidate\n";
    std::string ref_tsv = "index\tpredicted_label";
    for (const auto& name : labels_.names()) ref_tsv += "\tnll_" + name;
    ref_tsv += "\n";
    for (std::size_t i = 0; i < test.size(); ++i) {
      const auto r = rerank(*lm.model, lm.joint, test[i].source, cands[i], labels_, config_.criterion);
      best_tsv += std::to_string(i) + "\t" + test[i].source + "\t" + r.best.modern + "\t" + r.best.label + "\t" +
                  format_double(r.best.lm_score.per_token_nll) + "\t" + std::to_string(r.best.beam_rank) + "\n";
      for (const auto& c : r.grid) {
        grid_tsv += std::to_string(i) + "\t" + std::to_string(c.beam_rank) + "\t" + c.label + "\t" +
                    (c.valid ? "1" : "0") + "\t" + format_double(c.lm_score.total_nll) + "\t" +
                    std::to_string(c.lm_score.token_count) + "\t" + format_double(c.lm_score.per_token_nll) + "\t" +
                    c.modern + "\n";
      }
      const auto chron = infer_chronology(*lm.model, lm.joint, test[i].source, test[i].target, labels_, config_.criterion);
      ref_tsv += std::to_string(i) + "\t" + chron.label;
      for (const auto& c : chron.per_label) ref_tsv += "\t" + format_double(c.lm_score.per_token_nll);
      ref_tsv += "\n";
    }
    write_text_file(layout_.reranked(), best_tsv);
    write_text_file(layout_.grid(), grid_tsv);
    write_text_file(layout_.chronology_reference(), ref_tsv);
  }

  static std::vector<std::vector<std::string>> read_table(const fs::path& p, std::size_t min_fields) {
    auto lines = lines_of(read_text_file(p));
    std::vector<std::vector<std::string>> rows;
    for (std::size_t i = 1; i < lines.size(); ++i) {
      if (lines[i].empty()) continue;
      auto f = split_tabs(lines[i]);
      if (f.size() < min_fields) throw ValidationError(p.string() + ":" + std::to_string(i + 1) + ": too few fields");
      rows.push_back(std::move(f));
    }
    return rows;
  }

  void evaluate() {
    require(Stage::Translate, layout_.top1(), Stage::Evaluate);
    require(Stage::Rerank, layout_.reranked(), Stage::Evaluate);
    const auto test = load_parallel(layout_.test(), labels_);
    std::vector<std::string> refs, gold_bleu_labels;
    for (const auto& e : test) {
      refs.push_back(e.target);
      gold_bleu_labels.push_back(e.label ? e.label->name : "");
    }
    auto top = lines_of(read_text_file(layout_.top1()));
    top.resize(test.size());
    const auto reranked_rows = read_table(layout_.reranked(), 6);
    const auto reference_rows = read_table(layout_.chronology_reference(), 2);
    if (reranked_rows.size() != test.size() || reference_rows.size() != test.size()) {
      throw ValidationError("rerank outputs do not match the test set size; rerun stage 'rerank'");
    }
    std::vector<std::string> reranked, gold, system_pred, reference_pred;
    for (std::size_t i = 0; i < test.size(); ++i) {
      reranked.push_back(reranked_rows[i][2]);
      if (!test[i].label) continue;
      gold.push_back(test[i].label->name);
      system_pred.push_back(reranked_rows[i][3]);
      reference_pred.push_back(reference_rows[i][1]);
    }
    EvaluationReport report;
    report.bleu.emplace_back("top1", bleu(top, refs, gold_bleu_labels, &labels_));
    report.bleu.emplace_back("reranked", bleu(reranked, refs, gold_bleu_labels, &labels_));
    report.classification.emplace_back("system", classification_metrics(gold, system_pred, labels_));
    report.classification.emplace_back("reference", classification_metrics(gold, reference_pred, labels_));
    write_reports(report, layout_.report_dir());
    log() << format_text(report);
  }

  static std::string lm_csv(const LMTrainResult& r) {
    std::string out = "epoch,step,train_loss,dev_perplexity\n";
    for (const auto& e : r.epochs) {
      out += std::to_string(e.epoch) + "," + std::to_string(e.step) + "," + format_double(e.train_loss) + "," +
             (e.dev_perplexity ? format_double(*e.dev_perplexity) : "") + "\n";
    }
    return out;
  }

  void record(Stage s) {
    nlohmann::json manifest;
    if (fs::exists(layout_.manifest())) {
      try {
        manifest = nlohmann::json::parse(read_text_file(layout_.manifest()));
      } catch (const nlohmann::json::exception&) {
        manifest = nlohmann::json::object();
      }
    }
    if (!manifest.contains("config_digest") || manifest["config_digest"] != digest_) manifest["stages"] = nlohmann::json::object();
    manifest["config"] = config_.to_json();
    manifest["config_digest"] = digest_;
    nlohmann::json inputs = nlohmann::json::object();
    for (auto [name, path] : {std::pair{"parallel", config_.parallel_path}, std::pair{"mono_a", config_.mono_a_path},
                              std::pair{"mono_m", config_.mono_m_path}}) {
      if (!path.empty() && fs::exists(path)) inputs[name] = {{"path", path}, {"digest", digest_file(path)}};
    }
    manifest["inputs"] = inputs;
    nlohmann::json outputs = nlohmann::json::object();
    for (const auto& p : outputs_of(s)) {
      if (fs::exists(p)) outputs[fs::relative(p, layout_.root).generic_string()] = digest_file(p);
    }
    manifest["stages"][stage_name(s)] = {{"outputs", outputs}};
    write_text_file(layout_.manifest(), manifest.dump(2) + "\n");
  }

  std::vector<fs::path> outputs_of(Stage s) const {
    switch (s) {
      case Stage::Prep:
        return {layout_.train(), layout_.dev(), layout_.test(), layout_.mono_a(), layout_.mono_m(), layout_.stats(),
                layout_.src_vocab(), layout_.tgt_vocab(), layout_.joint_vocab()};
      case Stage::TrainMt: return {layout_.mt_model(), layout_.mt_metrics()};
      case Stage::TrainLm: return {layout_.lm_pretrained(), layout_.lm_dir() / "pretrain_metrics.csv"};
      case Stage::FinetuneLm: return {layout_.lm_finetuned(), layout_.lm_dir() / "finetune_metrics.csv"};
      case Stage::Translate: return {layout_.nbest(), layout_.top1()};
      case Stage::Rerank: return {layout_.reranked(), layout_.grid(), layout_.chronology_reference()};
      case Stage::Evaluate:
        return {layout_.report_dir() / "report.txt", layout_.report_dir() / "report.json",
                layout_.report_dir() / "confusion_system.csv", layout_.report_dir() / "confusion_reference.csv"};
    }
    return {};
  }

  RunConfig config_;
  LabelSet labels_;
  WorkLayout layout_;
  PipelineOptions options_;
  std::string digest_;
  std::ostream null_log_{nullptr};
};

}  // namespace

RunConfig::RunConfig() {
  mt_schedule.epochs = 15;
  pretrain.epochs = 3;
  finetune.epochs = 12;
}

void RunConfig::validate() const {
  const LabelSet set(labels);
  if (!(dev_frac >= 0.0 && test_frac >= 0.0 && dev_frac + test_frac < 1.0)) {
    throw ValidationError("dev_frac and test_frac must be >= 0 with a sum below 1");
  }
  if (min_freq == 0) throw ValidationError("tokenizer.min_freq must be positive");
  mt.validate();
  objective.validate();
  mt_schedule.validate();
  lm.validate();
  pretrain.validate();
  finetune.validate();
  if (decode.top_k == 0 || decode.beam_size < decode.top_k) throw ValidationError("decode: need beam_size >= top_k >= 1");
  if (decode.max_len == 0) throw ValidationError("decode.max_len must be positive");
  if (work_dir.empty()) throw ValidationError("work_dir must not be empty");
}

nlohmann::json RunConfig::to_json() const {
  return {{"labels", labels},
          {"seed", seed},
          {"data",
           {{"parallel", parallel_path},
            {"mono_a", mono_a_path},
            {"mono_m", mono_m_path},
            {"dev_frac", dev_frac},
            {"test_frac", test_frac},
            {"stratify", stratify}}},
          {"tokenizer", {{"min_freq", min_freq}, {"joint_vocab", joint_vocab}}},
          {"mt", mt.to_json()},
          {"objective", objective.to_json()},
          {"mt_schedule", mt_schedule.to_json()},
          {"lm", lm.to_json()},
          {"pretrain", pretrain.to_json()},
          {"finetune", finetune.to_json()},
          {"decode", {{"beam_size", decode.beam_size}, {"top_k", decode.top_k}, {"max_len", decode.max_len}}},
          {"rerank", {{"criterion", criterion_name(criterion)}}},
          {"work_dir", work_dir}};
}

RunConfig RunConfig::from_json(const nlohmann::json& j) {
  RunConfig c;
  try {
    check_keys(j,
               {"labels", "seed", "data", "tokenizer", "mt", "objective", "mt_schedule", "lm", "pretrain", "finetune",
                "decode", "rerank", "work_dir"},
               "run config");
    read_into(j, "labels", c.labels);
    read_into(j, "seed", c.seed);
    read_into(j, "work_dir", c.work_dir);
    if (j.contains("data")) {
      const auto& d = j["data"];
      check_keys(d, {"parallel", "mono_a", "mono_m", "dev_frac", "test_frac", "stratify"}, "data");
      read_into(d, "parallel", c.parallel_path);
      read_into(d, "mono_a", c.mono_a_path);
      read_into(d, "mono_m", c.mono_m_path);
      read_into(d, "dev_frac", c.dev_frac);
      read_into(d, "test_frac", c.test_frac);
      read_into(d, "stratify", c.stratify);
    }
    if (j.contains("tokenizer")) {
      check_keys(j["tokenizer"], {"min_freq", "joint_vocab"}, "tokenizer");
      read_into(j["tokenizer"], "min_freq", c.min_freq);
      read_into(j["tokenizer"], "joint_vocab", c.joint_vocab);
    }
    if (j.contains("mt")) {
      check_keys(j["mt"], {"num_layers", "num_heads", "model_dim", "ffn_dim", "max_len", "dropout", "share_decoder_embeddings"}, "mt");
      c.mt = TransformerConfig::from_json(j["mt"]);
    }
    if (j.contains("objective")) {
      check_keys(j["objective"], {"w_sup", "w_lm_a", "w_lm_m"}, "objective");
      c.objective = ObjectiveWeights::from_json(j["objective"]);
    }
    if (j.contains("mt_schedule")) {
      check_keys(j["mt_schedule"],
                 {"epochs", "batch_p", "batch_a", "batch_m", "proportions", "max_non_parallel_run", "lr", "warmup",
                  "clip_norm", "backward_supervised", "dev_decode_len", "seed"},
                 "mt_schedule");
      nlohmann::json merged = c.mt_schedule.to_json();
      merged.update(j["mt_schedule"]);
      c.mt_schedule = TrainSchedule::from_json(merged);
    }
    if (j.contains("lm")) {
      check_keys(j["lm"], {"num_layers", "num_heads", "model_dim", "ffn_dim", "context", "dropout"}, "lm");
      c.lm = LMConfig::from_json(j["lm"]);
    }
    for (auto [key, target] : {std::pair{"pretrain", &c.pretrain}, std::pair{"finetune", &c.finetune}}) {
      if (!j.contains(key)) continue;
      check_keys(j[key], {"epochs", "batch", "lr", "warmup", "clip_norm", "seed"}, key);
      nlohmann::json merged = target->to_json();
      merged.update(j[key]);
      *target = LMSchedule::from_json(merged);
    }
    if (j.contains("decode")) {
      check_keys(j["decode"], {"beam_size", "top_k", "max_len"}, "decode");
      read_into(j["decode"], "beam_size", c.decode.beam_size);
      read_into(j["decode"], "top_k", c.decode.top_k);
      read_into(j["decode"], "max_len", c.decode.max_len);
    }
    if (j.contains("rerank")) {
      check_keys(j["rerank"], {"criterion"}, "rerank");
      if (j["rerank"].contains("criterion")) c.criterion = parse_criterion(j["rerank"]["criterion"].get<std::string>());
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("invalid run config: ") + e.what());
  }
  c.validate();
  return c;
}

void RunConfig::apply_override(nlohmann::json& j, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ValidationError("override '" + assignment + "' is not key=value");
  const std::string key = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  nlohmann::json value = nlohmann::json::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;
  nlohmann::json* node = &j;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw ValidationError("override key '" + key + "' has an empty component");
    if (dot == std::string::npos) {
      (*node)[part] = value;
      break;
    }
    if (!node->contains(part)) (*node)[part] = nlohmann::json::object();
    node = &(*node)[part];
    start = dot + 1;
  }
}

std::string RunConfig::digest() const { return digest_string(to_json().dump()); }

const std::vector<Stage>& all_stages() {
  static const std::vector<Stage> stages{Stage::Prep,      Stage::TrainMt, Stage::TrainLm, Stage::FinetuneLm,
                                         Stage::Translate, Stage::Rerank,  Stage::Evaluate};
  return stages;
}

const char* stage_name(Stage s) {
  switch (s) {
    case Stage::Prep: return "prep";
    case Stage::TrainMt: return "train-mt";
    case Stage::TrainLm: return "train-lm";
    case Stage::FinetuneLm: return "finetune-lm";
    case Stage::Translate: return "translate";
    case Stage::Rerank: return "rerank";
    case Stage::Evaluate: return "evaluate";
  }
  return "?";
}

Stage parse_stage_name(std::string_view name) {
  for (Stage s : all_stages()) {
    if (name == stage_name(s)) return s;
  }
  throw ValidationError("unknown stage '" + std::string(name) +
                        "' (expected prep, train-mt, train-lm, finetune-lm, translate, rerank, evaluate)");
}

nlohmann::json mt_metadata(const TransformerConfig& config, const Vocabulary& source, const Vocabulary& target) {
  return {{"kind", "translation"}, {"config", config.to_json()}, {"source_vocab", source.to_json()},
          {"target_vocab", target.to_json()}};
}

void save_mt(const fs::path& path, const TranslationModel<float>& model, const Vocabulary& source,
             const Vocabulary& target, const std::string& config_digest) {
  nn::save_checkpoint(path, model.params(), mt_metadata(model.config(), source, target), config_digest);
}

MtArtifact load_mt(const fs::path& path) {
  const auto header = nn::read_checkpoint_header(path);
  const auto& meta = header.metadata;
  if (!meta.is_object() || meta.value("kind", "") != "translation") {
    throw ValidationError(path.string() + " is not a translation model checkpoint");
  }
  MtArtifact art{Vocabulary::from_json(meta.at("source_vocab")), Vocabulary::from_json(meta.at("target_vocab")), nullptr};
  art.model = std::make_unique<TranslationModel<float>>(TransformerConfig::from_json(meta.at("config")),
                                                        art.source.size(), art.target.size(), 0);
  nn::load_checkpoint(path, art.model->params());
  return art;
}

nlohmann::json lm_metadata(const LMConfig& config, const Vocabulary& joint, LMStage stage) {
  return {{"kind", "language_model"}, {"config", config.to_json()}, {"vocab", joint.to_json()}, {"stage", stage_name(stage)}};
}

void save_lm(const fs::path& path, const LanguageModel<float>& model, const Vocabulary& joint,
             const std::string& config_digest) {
  nn::save_checkpoint(path, model.params(), lm_metadata(model.config(), joint, model.stage), config_digest);
}

LmArtifact load_lm(const fs::path& path) {
  const auto header = nn::read_checkpoint_header(path);
  const auto& meta = header.metadata;
  if (!meta.is_object() || meta.value("kind", "") != "language_model") {
    throw ValidationError(path.string() + " is not a language model checkpoint");
  }
  LmArtifact art{Vocabulary::from_json(meta.at("vocab")), nullptr};
  art.model = std::make_unique<LanguageModel<float>>(LMConfig::from_json(meta.at("config")), art.joint.size(), 0);
  nn::load_checkpoint(path, art.model->params());
  art.model->stage = parse_stage(meta.value("stage", "initialized"));
  return art;
}

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

std::string format_nbest(const std::vector<NBestEntry>& entries) {
  std::string out = "index\tsource\trank\tscore\tlog_prob\tcandidate\n";
  for (const auto& e : entries) {
    out += std::to_string(e.index) + "\t" + e.source + "\t" + std::to_string(e.rank) + "\t" + format_double(e.score) +
           "\t" + format_double(e.log_prob) + "\t" + e.candidate + "\n";
  }
  return out;
}

std::vector<NBestEntry> parse_nbest(std::string_view text) {
  const auto lines = lines_of(text);
  std::vector<NBestEntry> out;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    const auto f = split_tabs(lines[i]);
    if (f.size() != 6) throw ValidationError("n-best line " + std::to_string(i + 1) + ": expected 6 fields");
    try {
      out.push_back({std::stoul(f[0]), f[1], std::stoul(f[2]), std::stod(f[3]), std::stod(f[4]), f[5]});
    } catch (const std::exception&) {
      throw ValidationError("n-best line " + std::to_string(i + 1) + ": malformed number");
    }
  }
  return out;
}

std::vector<NBestEntry> translate_nbest(const MtArtifact& mt, const std::vector<std::string>& sources,
                                        const DecodeConfig& decode) {
  BeamOptions opts;
  opts.beam_size = decode.beam_size;
  opts.top_k = decode.top_k;
  opts.max_len = decode.max_len;
  opts.eos = kEos;
  std::vector<NBestEntry> out;
  for (std::size_t i = 0; i < sources.size(); ++i) {
    const auto hyps = translate_beam(*mt.model, mt.source.encode(sources[i]), opts);
    for (std::size_t r = 0; r < hyps.size(); ++r) {
      out.push_back({i, sources[i], r, hyps[r].score(), hyps[r].log_prob, mt.target.decode(hyps[r].tokens)});
    }
  }
  return out;
}

void run_pipeline(const RunConfig& config, const std::set<Stage>& stages, const PipelineOptions& options) {
  config.validate();
  fs::create_directories(config.work_dir);
  Runner runner(config, options);
  for (Stage s : all_stages()) {
    if (stages.contains(s)) runner.run(s);
  }
}

}  // namespace tatrans
