#include "tatrans/evaluation.hpp"

#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>

#include "tatrans/error.hpp"
#include "tatrans/utf8.hpp"

namespace tatrans {

namespace {

constexpr std::size_t kMaxOrder = 4;

struct Counts {
  std::array<std::size_t, kMaxOrder> matches{};
  std::array<std::size_t, kMaxOrder> totals{};
  std::array<std::size_t, kMaxOrder> ref_totals{};
  std::size_t hyp_len = 0;
  std::size_t ref_len = 0;
  std::size_t sentences = 0;

  void add(const Counts& o) {
    for (std::size_t n = 0; n < kMaxOrder; ++n) {
      matches[n] += o.matches[n];
      totals[n] += o.totals[n];
      ref_totals[n] += o.ref_totals[n];
    }
    hyp_len += o.hyp_len;
    ref_len += o.ref_len;
    sentences += o.sentences;
  }
};

std::map<std::u32string_view, std::size_t> ngrams(std::u32string_view s, std::size_t n) {
  std::map<std::u32string_view, std::size_t> out;
  for (std::size_t i = 0; i + n <= s.size(); ++i) ++out[s.substr(i, n)];
  return out;
}

Counts sentence_counts(const std::string& hyp_text, const std::string& ref_text) {
  const std::u32string hyp = utf8::decode(hyp_text);
  const std::u32string ref = utf8::decode(ref_text);
  Counts c;
  c.hyp_len = hyp.size();
  c.ref_len = ref.size();
  c.sentences = 1;
  for (std::size_t n = 1; n <= kMaxOrder; ++n) {
    const auto h = ngrams(hyp, n);
    const auto r = ngrams(ref, n);
    for (const auto& [gram, count] : h) {
      c.totals[n - 1] += count;
      auto it = r.find(gram);
      if (it != r.end()) c.matches[n - 1] += std::min(count, it->second);
    }
    c.ref_totals[n - 1] = ref.size() >= n ? ref.size() - n + 1 : 0;
  }
  return c;
}

void finish(const Counts& c, BleuReport& out) {
  out.matches = c.matches;
  out.totals = c.totals;
  out.hyp_chars = c.hyp_len;
  out.ref_chars = c.ref_len;
  out.sentences = c.sentences;
  if (c.hyp_len == 0 && c.ref_len == 0) {
    out.precisions.fill(1.0);
    out.brevity_penalty = 1.0;
    out.bleu = 1.0;
    return;
  }
  double log_sum = 0.0;
  for (std::size_t n = 0; n < kMaxOrder; ++n) {
    double p;
    if (c.totals[n] == 0) {
      p = c.ref_totals[n] == 0 ? 1.0 : 0.5;
    } else if (c.matches[n] == 0) {
      p = n == 0 ? 0.0 : 1.0 / (2.0 * static_cast<double>(c.totals[n]));
    } else {
      p = static_cast<double>(c.matches[n]) / static_cast<double>(c.totals[n]);
    }
    out.precisions[n] = p;
    log_sum += p > 0.0 ? std::log(p) : -INFINITY;
  }
  if (c.hyp_len == 0) {
    out.brevity_penalty = 0.0;
  } else if (c.hyp_len < c.ref_len) {
    out.brevity_penalty = std::exp(1.0 - static_cast<double>(c.ref_len) / static_cast<double>(c.hyp_len));
  } else {
    out.brevity_penalty = 1.0;
  }
  out.bleu = out.brevity_penalty * std::exp(log_sum / static_cast<double>(kMaxOrder));
}

double safe_div(double a, double b) { return b == 0.0 ? 0.0 : a / b; }

template <typename J, typename V>
void get(const J& j, const char* key, V& out) {
  out = j.at(key).template get<V>();
}

}  // namespace

BleuReport bleu(const std::vector<std::string>& hypotheses, const std::vector<std::string>& references,
                const std::vector<std::string>& labels, const LabelSet* label_set) {
  if (hypotheses.size() != references.size()) {
    throw ValidationError("bleu: " + std::to_string(hypotheses.size()) + " hypotheses but " +
                          std::to_string(references.size()) + " references");
  }
  if (hypotheses.empty()) throw ValidationError("bleu: empty input");
  if (!labels.empty() && labels.size() != hypotheses.size()) {
    throw ValidationError("bleu: " + std::to_string(labels.size()) + " labels for " +
                          std::to_string(hypotheses.size()) + " examples");
  }
  Counts all;
  std::map<std::string, Counts> by_label;
  for (std::size_t i = 0; i < hypotheses.size(); ++i) {
    const Counts c = sentence_counts(hypotheses[i], references[i]);
    all.add(c);
    if (!labels.empty() && !labels[i].empty()) {
      if (label_set && !label_set->find(labels[i])) throw ValidationError("bleu: unknown label '" + labels[i] + "'");
      by_label[labels[i]].add(c);
    }
  }
  BleuReport out;
  finish(all, out);
  if (!labels.empty()) {
    std::vector<std::string> order;
    if (label_set) {
      order = label_set->names();
    } else {
      for (const auto& [name, _] : by_label) order.push_back(name);
    }
    for (const auto& name : order) {
      auto it = by_label.find(name);
      if (it == by_label.end()) continue;
      BleuReport sub;
      finish(it->second, sub);
      out.per_label.push_back({name, sub.bleu, sub.sentences, sub.hyp_chars, sub.ref_chars});
    }
  }
  return out;
}

ClassificationReport classification_metrics(const std::vector<std::string>& gold,
                                            const std::vector<std::string>& predicted, const LabelSet& labels) {
  if (gold.size() != predicted.size()) {
    throw ValidationError("classification metrics: " + std::to_string(gold.size()) + " gold labels but " +
                          std::to_string(predicted.size()) + " predictions");
  }
  const std::size_t k = labels.size();
  auto index = [&](const std::string& name, const char* role) {
    auto l = labels.find(name);
    if (!l) throw ValidationError(std::string("classification metrics: ") + role + " label '" + name + "' is not in the label set");
    return l->index;
  };
  ClassificationReport r;
  r.confusion.assign(k, std::vector<std::size_t>(k, 0));
  for (std::size_t i = 0; i < gold.size(); ++i) ++r.confusion[index(gold[i], "gold")][index(predicted[i], "predicted")];
  r.total = gold.size();
  std::size_t trace = 0;
  for (std::size_t c = 0; c < k; ++c) {
    std::size_t predicted_c = 0, support = 0;
    for (std::size_t o = 0; o < k; ++o) {
      predicted_c += r.confusion[o][c];
      support += r.confusion[c][o];
    }
    const double tp = static_cast<double>(r.confusion[c][c]);
    trace += r.confusion[c][c];
    LabelMetrics m;
    m.label = labels.names()[c];
    m.support = support;
    m.precision = safe_div(tp, static_cast<double>(predicted_c));
    m.recall = safe_div(tp, static_cast<double>(support));
    m.f1 = safe_div(2.0 * m.precision * m.recall, m.precision + m.recall);
    r.per_label.push_back(m);
  }
  r.accuracy = safe_div(static_cast<double>(trace), static_cast<double>(r.total));
  for (const auto& m : r.per_label) {
    r.macro.precision += m.precision / static_cast<double>(k);
    r.macro.recall += m.recall / static_cast<double>(k);
    r.macro.f1 += m.f1 / static_cast<double>(k);
    const double w = safe_div(static_cast<double>(m.support), static_cast<double>(r.total));
    r.weighted.precision += w * m.precision;
    r.weighted.recall += w * m.recall;
    r.weighted.f1 += w * m.f1;
  }
  return r;
}

nlohmann::json to_json(const BleuReport& r) {
  nlohmann::json per_label = nlohmann::json::array();
  for (const auto& l : r.per_label) {
    per_label.push_back({{"label", l.label},
                         {"bleu", l.bleu},
                         {"sentences", l.sentences},
                         {"hyp_chars", l.hyp_chars},
                         {"ref_chars", l.ref_chars}});
  }
  return {{"bleu", r.bleu},           {"precisions", r.precisions}, {"matches", r.matches},
          {"totals", r.totals},       {"brevity_penalty", r.brevity_penalty},
          {"hyp_chars", r.hyp_chars}, {"ref_chars", r.ref_chars},   {"sentences", r.sentences},
          {"per_label", per_label}};
}

nlohmann::json to_json(const ClassificationReport& r) {
  nlohmann::json per_label = nlohmann::json::array();
  for (const auto& m : r.per_label) {
    per_label.push_back({{"label", m.label},
                         {"precision", m.precision},
                         {"recall", m.recall},
                         {"f1", m.f1},
                         {"support", m.support}});
  }
  auto avg = [](const AveragedMetrics& a) {
    return nlohmann::json{{"precision", a.precision}, {"recall", a.recall}, {"f1", a.f1}};
  };
  return {{"per_label", per_label}, {"accuracy", r.accuracy}, {"macro", avg(r.macro)},
          {"weighted", avg(r.weighted)}, {"confusion", r.confusion}, {"total", r.total}};
}

nlohmann::json to_json(const EvaluationReport& r) {
  nlohmann::json bleu = nlohmann::json::array();
  for (const auto& [name, b] : r.bleu) bleu.push_back({{"name", name}, {"report", to_json(b)}});
  nlohmann::json cls = nlohmann::json::array();
  for (const auto& [name, c] : r.classification) cls.push_back({{"name", name}, {"report", to_json(c)}});
  return {{"bleu", bleu}, {"classification", cls}};
}

BleuReport bleu_report_from_json(const nlohmann::json& j) {
  try {
    BleuReport r;
    get(j, "bleu", r.bleu);
    get(j, "precisions", r.precisions);
    get(j, "matches", r.matches);
    get(j, "totals", r.totals);
    get(j, "brevity_penalty", r.brevity_penalty);
    get(j, "hyp_chars", r.hyp_chars);
    get(j, "ref_chars", r.ref_chars);
    get(j, "sentences", r.sentences);
    for (const auto& l : j.at("per_label")) {
      LabelBleu b;
      get(l, "label", b.label);
      get(l, "bleu", b.bleu);
      get(l, "sentences", b.sentences);
      get(l, "hyp_chars", b.hyp_chars);
      get(l, "ref_chars", b.ref_chars);
      r.per_label.push_back(b);
    }
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("invalid BLEU report: ") + e.what());
  }
}

ClassificationReport classification_report_from_json(const nlohmann::json& j) {
  try {
    ClassificationReport r;
    for (const auto& l : j.at("per_label")) {
      LabelMetrics m;
      get(l, "label", m.label);
      get(l, "precision", m.precision);
      get(l, "recall", m.recall);
      get(l, "f1", m.f1);
      get(l, "support", m.support);
      r.per_label.push_back(m);
    }
    get(j, "accuracy", r.accuracy);
    for (auto [key, avg] : {std::pair{"macro", &r.macro}, std::pair{"weighted", &r.weighted}}) {
      const auto& a = j.at(key);
      get(a, "precision", avg->precision);
      get(a, "recall", avg->recall);
      get(a, "f1", avg->f1);
    }
    get(j, "confusion", r.confusion);
    get(j, "total", r.total);
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("invalid classification report: ") + e.what());
  }
}

EvaluationReport evaluation_report_from_json(const nlohmann::json& j) {
  try {
    EvaluationReport r;
    for (const auto& b : j.at("bleu")) r.bleu.emplace_back(b.at("name").get<std::string>(), bleu_report_from_json(b.at("report")));
    for (const auto& c : j.at("classification")) {
      r.classification.emplace_back(c.at("name").get<std::string>(), classification_report_from_json(c.at("report")));
    }
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("invalid evaluation report: ") + e.what());
  }
}

std::string format_text(const EvaluationReport& r) {
  std::ostringstream out;
  if (!r.bleu.empty()) {
    out << "Translation quality (character BLEU x100, n = 1..4)\n";
    char buf[256];
    std::snprintf(buf, sizeof buf, "%-22s %8s %7s %7s %7s %7s %6s %8s %8s\n", "system", "BLEU", "p1", "p2", "p3", "p4",
                  "BP", "hyp_len", "ref_len");
    out << buf;
    for (const auto& [name, b] : r.bleu) {
      std::snprintf(buf, sizeof buf, "%-22s %8.2f %7.4f %7.4f %7.4f %7.4f %6.4f %8zu %8zu\n", name.c_str(),
                    100.0 * b.bleu, b.precisions[0], b.precisions[1], b.precisions[2], b.precisions[3],
                    b.brevity_penalty, b.hyp_chars, b.ref_chars);
      out << buf;
      for (const auto& l : b.per_label) {
        const std::string row = "  " + l.label + " (" + std::to_string(l.sentences) + ")";
        std::snprintf(buf, sizeof buf, "%-22s %8.2f %47s %8zu %8zu\n", row.c_str(), 100.0 * l.bleu, "", l.hyp_chars,
                      l.ref_chars);
        out << buf;
      }
    }
  }
  for (const auto& [name, c] : r.classification) {
    if (out.tellp() > 0) out << '\n';
    out << "Chronology inference: " << name << '\n';
    char buf[256];
    std::snprintf(buf, sizeof buf, "%-22s %10s %10s %10s\n", "", "Precision", "Recall", "F1");
    out << buf;
    for (const auto& m : c.per_label) {
      const std::string row = m.label + " (" + std::to_string(m.support) + ")";
      std::snprintf(buf, sizeof buf, "%-22s %10.4f %10.4f %10.4f\n", row.c_str(), m.precision, m.recall, m.f1);
      out << buf;
    }
    std::snprintf(buf, sizeof buf, "%-22s %10s %10s %10.4f\n", "Accuracy", "", "", c.accuracy);
    out << buf;
    std::snprintf(buf, sizeof buf, "%-22s %10.4f %10.4f %10.4f\n", "Macro avg.", c.macro.precision, c.macro.recall,
                  c.macro.f1);
    out << buf;
    std::snprintf(buf, sizeof buf, "%-22s %10.4f %10.4f %10.4f\n", "Weighted avg.", c.weighted.precision,
                  c.weighted.recall, c.weighted.f1);
    out << buf;
  }
  return out.str();
}

std::string confusion_csv(const ClassificationReport& r) {
  std::ostringstream out;
  out << "gold\\predicted";
  for (const auto& m : r.per_label) out << ',' << m.label;
  out << '\n';
  for (std::size_t i = 0; i < r.confusion.size(); ++i) {
    out << r.per_label[i].label;
    for (std::size_t v : r.confusion[i]) out << ',' << v;
    out << '\n';
  }
  return out.str();
}

std::vector<std::filesystem::path> write_reports(const EvaluationReport& r, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw RuntimeError("cannot create report directory " + dir.string() + ": " + ec.message());
  std::vector<std::filesystem::path> written;
  auto put = [&](const std::filesystem::path& p, const std::string& text) {
    write_text_file(p, text);
    written.push_back(p);
  };
  put(dir / "report.txt", format_text(r));
  put(dir / "report.json", to_json(r).dump(2) + "\n");
  for (const auto& [name, c] : r.classification) put(dir / ("confusion_" + name + ".csv"), confusion_csv(c));
  return written;
}

}  // namespace tatrans
