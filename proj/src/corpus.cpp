#include "tatrans/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "json.hpp"

#include "tatrans/error.hpp"
#include "tatrans/random.hpp"
#include "tatrans/utf8.hpp"

namespace tatrans {

namespace {

std::vector<std::string_view> split_lines(std::string_view text) {
  std::vector<std::string_view> lines;
  std::size_t start = 0;
  while (start < text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(start, end - start);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    lines.push_back(line);
    start = end + 1;
  }
  return lines;
}

std::vector<std::string_view> split_tabs(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    std::size_t end = line.find('\t', start);
    if (end == std::string_view::npos) {
      fields.push_back(line.substr(start));
      break;
    }
    fields.push_back(line.substr(start, end - start));
    start = end + 1;
  }
  return fields;
}

// floor(n * frac) without 0.1 * 30 = 2.9999... surprises.
std::size_t portion(std::size_t n, double frac) {
  return static_cast<std::size_t>(std::floor(static_cast<double>(n) * frac + 1e-9));
}

}  // namespace

LabelSet::LabelSet(std::vector<std::string> names) : names_(std::move(names)) {
  if (names_.empty()) throw ValidationError("label set must not be empty");
  std::set<std::string> seen;
  for (const auto& n : names_) {
    if (n.empty()) throw ValidationError("label names must not be empty");
    for (unsigned char c : n) {
      if (c < 0x21 || c > 0x7E) throw ValidationError("label name must be printable ASCII without spaces: '" + n + "'");
    }
    if (!seen.insert(n).second) throw ValidationError("duplicate label name: " + n);
  }
}

LabelSet LabelSet::standard() { return LabelSet({"pre-qin", "han", "song"}); }

LabelSet LabelSet::parse(std::string_view csv) {
  std::vector<std::string> names;
  std::size_t start = 0;
  while (start <= csv.size()) {
    std::size_t end = csv.find(',', start);
    if (end == std::string_view::npos) end = csv.size();
    names.emplace_back(csv.substr(start, end - start));
    start = end + 1;
  }
  return LabelSet(std::move(names));
}

ChronologyLabel LabelSet::at(std::size_t index) const {
  if (index >= names_.size()) throw ValidationError("label index out of range: " + std::to_string(index));
  return {names_[index], index};
}

std::optional<ChronologyLabel> LabelSet::find(std::string_view name) const {
  for (std::size_t i = 0; i < names_.size(); ++i) {
    if (names_[i] == name) return ChronologyLabel{names_[i], i};
  }
  return std::nullopt;
}

std::string LabelSet::joined() const {
  std::string out;
  for (std::size_t i = 0; i < names_.size(); ++i) {
    if (i) out += ',';
    out += names_[i];
  }
  return out;
}

std::string_view side_name(Side side) { return side == Side::Ancient ? "zh-a" : "zh-m"; }

Side parse_side(std::string_view name) {
  if (name == "zh-a") return Side::Ancient;
  if (name == "zh-m") return Side::Modern;
  throw ValidationError("unknown corpus side '" + std::string(name) + "' (expected zh-a or zh-m)");
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open file: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::filesystem::path& path, std::string_view text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw RuntimeError("cannot write file: " + path.string());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw RuntimeError("write failed: " + path.string());
}

std::vector<ParallelExample> parse_parallel(std::string_view text, const LabelSet& labels,
                                            std::string_view origin) {
  std::vector<ParallelExample> out;
  const auto lines = split_lines(text);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const std::string where = std::string(origin) + ":" + std::to_string(i + 1);
    const auto fields = split_tabs(lines[i]);
    if (fields.size() < 2 || fields.size() > 3) {
      throw ValidationError(where + ": malformed record, expected 2 or 3 tab-separated fields, got " +
                            std::to_string(fields.size()));
    }
    ParallelExample ex{std::string(fields[0]), std::string(fields[1]), std::nullopt};
    if (ex.source.empty() || ex.target.empty()) {
      throw ValidationError(where + ": malformed record, empty source or target");
    }
    try {
      utf8::decode(ex.source);
      utf8::decode(ex.target);
    } catch (const ValidationError& e) {
      throw ValidationError(where + ": " + e.what());
    }
    if (fields.size() == 3 && !fields[2].empty()) {
      auto label = labels.find(fields[2]);
      if (!label) {
        throw ValidationError(where + ": unknown label '" + std::string(fields[2]) + "' (label set: " +
                              labels.joined() + ")");
      }
      ex.label = *label;
    }
    out.push_back(std::move(ex));
  }
  if (out.empty()) throw ValidationError(std::string(origin) + ": no records");
  return out;
}

std::vector<ParallelExample> load_parallel(const std::filesystem::path& path, const LabelSet& labels) {
  return parse_parallel(read_text_file(path), labels, path.string());
}

void save_parallel(const std::filesystem::path& path, const std::vector<ParallelExample>& examples) {
  std::string text;
  for (const auto& ex : examples) {
    text += ex.source;
    text += '\t';
    text += ex.target;
    if (ex.label) {
      text += '\t';
      text += ex.label->name;
    }
    text += '\n';
  }
  write_text_file(path, text);
}

MonoCorpus load_mono(const std::filesystem::path& path, Side side) {
  if (!std::filesystem::exists(path)) throw ValidationError("monolingual file missing: " + path.string());
  const std::string text = read_text_file(path);
  MonoCorpus corpus{side, {}};
  const auto lines = split_lines(text);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    try {
      utf8::decode(lines[i]);
    } catch (const ValidationError& e) {
      throw ValidationError(path.string() + ":" + std::to_string(i + 1) + ": " + e.what());
    }
    corpus.sentences.emplace_back(lines[i]);
  }
  return corpus;
}

void save_mono(const std::filesystem::path& path, const MonoCorpus& corpus) {
  std::string text;
  for (const auto& s : corpus.sentences) {
    text += s;
    text += '\n';
  }
  write_text_file(path, text);
}

CorpusSplit split(const std::vector<ParallelExample>& examples, double dev_frac, double test_frac,
                  std::uint64_t seed, bool stratify) {
  if (!(dev_frac >= 0.0 && dev_frac < 1.0) || !(test_frac >= 0.0 && test_frac < 1.0) ||
      !(dev_frac + test_frac < 1.0)) {
    throw ValidationError("split fractions out of range: dev=" + std::to_string(dev_frac) +
                          " test=" + std::to_string(test_frac) + " (each in [0,1), sum < 1)");
  }
  enum class Part : unsigned char { Train, Dev, Test };
  std::vector<Part> part(examples.size(), Part::Train);
  Rng rng(seed);

  auto assign = [&](std::vector<std::size_t> pool) {
    const std::size_t n_dev = portion(pool.size(), dev_frac);
    const std::size_t n_test = portion(pool.size(), test_frac);
    rng.shuffle(std::span<std::size_t>(pool));
    for (std::size_t i = 0; i < n_dev; ++i) part[pool[i]] = Part::Dev;
    for (std::size_t i = n_dev; i < n_dev + n_test; ++i) part[pool[i]] = Part::Test;
  };

  if (stratify) {
    std::map<std::size_t, std::vector<std::size_t>> by_label;
    for (std::size_t i = 0; i < examples.size(); ++i) {
      if (examples[i].label) by_label[examples[i].label->index].push_back(i);
    }
    for (auto& [label, pool] : by_label) assign(std::move(pool));
  } else {
    std::vector<std::size_t> pool;
    for (std::size_t i = 0; i < examples.size(); ++i) {
      if (examples[i].label) pool.push_back(i);
    }
    assign(std::move(pool));
  }

  CorpusSplit out;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    switch (part[i]) {
      case Part::Train: out.train.push_back(examples[i]); break;
      case Part::Dev: out.dev.push_back(examples[i]); break;
      case Part::Test: out.test.push_back(examples[i]); break;
    }
  }
  return out;
}

CorpusStats stats(const std::vector<ParallelExample>& examples) {
  CorpusStats s;
  s.sentence_count = examples.size();
  for (const auto& ex : examples) {
    s.char_count_source += utf8::length(ex.source);
    s.char_count_target += utf8::length(ex.target);
    if (ex.label) ++s.per_label_counts[ex.label->name];
  }
  return s;
}

CorpusStats stats(const MonoCorpus& corpus) {
  CorpusStats s;
  s.sentence_count = corpus.sentences.size();
  for (const auto& sent : corpus.sentences) s.char_count_source += utf8::length(sent);
  return s;
}

nlohmann::json to_json(const CorpusStats& s) {
  nlohmann::json j;
  j["sentence_count"] = s.sentence_count;
  j["char_count_source"] = s.char_count_source;
  j["char_count_target"] = s.char_count_target;
  j["per_label_counts"] = s.per_label_counts;
  return j;
}

}  // namespace tatrans
