#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace tatrans {

/// One period from the run's ordered label set.
struct ChronologyLabel {
  std::string name;
  std::size_t index = 0;

  friend bool operator==(const ChronologyLabel&, const ChronologyLabel&) = default;
};

/// Ordered, nonempty, duplicate-free set of chronology labels.
class LabelSet {
 public:
  explicit LabelSet(std::vector<std::string> names);

  /// pre-qin, han, song.
  static LabelSet standard();
  /// Comma-separated names, e.g. "pre-qin,han,song".
  static LabelSet parse(std::string_view csv);

  std::size_t size() const { return names_.size(); }
  ChronologyLabel at(std::size_t index) const;
  std::optional<ChronologyLabel> find(std::string_view name) const;
  const std::vector<std::string>& names() const { return names_; }
  std::string joined() const;

  friend bool operator==(const LabelSet&, const LabelSet&) = default;

 private:
  std::vector<std::string> names_;
};

struct ParallelExample {
  std::string source;  // ancient side (zh-a)
  std::string target;  // modern side (zh-m)
  std::optional<ChronologyLabel> label;

  friend bool operator==(const ParallelExample&, const ParallelExample&) = default;
};

enum class Side { Ancient, Modern };

std::string_view side_name(Side side);
/// Accepts "zh-a" or "zh-m".
Side parse_side(std::string_view name);

struct MonoCorpus {
  Side side = Side::Ancient;
  std::vector<std::string> sentences;
};

struct CorpusStats {
  std::size_t sentence_count = 0;
  std::size_t char_count_source = 0;
  std::size_t char_count_target = 0;
  std::map<std::string, std::size_t> per_label_counts;

  friend bool operator==(const CorpusStats&, const CorpusStats&) = default;
};

struct CorpusSplit {
  std::vector<ParallelExample> train;
  std::vector<ParallelExample> dev;
  std::vector<ParallelExample> test;
};

/// Tab-separated `source<TAB>target[<TAB>label]`, one record per line.
std::vector<ParallelExample> load_parallel(const std::filesystem::path& path, const LabelSet& labels);
std::vector<ParallelExample> parse_parallel(std::string_view text, const LabelSet& labels,
                                            std::string_view origin = "<memory>");
void save_parallel(const std::filesystem::path& path, const std::vector<ParallelExample>& examples);

/// One sentence per line; blank lines are skipped.
MonoCorpus load_mono(const std::filesystem::path& path, Side side);
void save_mono(const std::filesystem::path& path, const MonoCorpus& corpus);

/// Random dev/test split over labeled examples only. Unlabeled examples always land
/// in train. Without stratification dev and test get floor(n * frac) examples each,
/// n being the labeled count; with stratification the floor applies per label.
/// Each part keeps the input order.
CorpusSplit split(const std::vector<ParallelExample>& examples, double dev_frac, double test_frac,
                  std::uint64_t seed, bool stratify = false);

CorpusStats stats(const std::vector<ParallelExample>& examples);
CorpusStats stats(const MonoCorpus& corpus);

nlohmann::json to_json(const CorpusStats& s);

/// Reads a whole file, throwing ValidationError if it cannot be opened.
std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, std::string_view text);

}  // namespace tatrans
