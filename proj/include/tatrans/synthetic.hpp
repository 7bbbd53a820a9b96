#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "tatrans/corpus.hpp"

namespace tatrans {

/// Character substitution applied position by position: each source character
/// maps to a (one- or two-character) target word.
using SubstitutionTable = std::map<char32_t, std::u32string>;

/// Generation rules for one era.
struct EraSpec {
  SubstitutionTable table;        // covers the content alphabet and this era's markers
  std::vector<char32_t> markers;  // characters that only this era emits
  double marker_rate = 0.3;       // per-position probability of inserting a marker
};

/// Full description of a synthetic corpus. Usually produced by
/// make_synthetic_config(), but tables may be written by hand.
struct SyntheticConfig {
  std::vector<std::string> labels{"pre-qin", "han", "song"};
  std::vector<char32_t> content;  // shared source alphabet, excluding markers
  std::vector<EraSpec> eras;      // one per label, same order
  std::size_t min_len = 6;        // content characters per sentence
  std::size_t max_len = 12;
  std::size_t min_markers = 1;    // inserted if the rate alone produced fewer
  std::size_t successors = 4;     // branching of each era's character bigram chain
  std::vector<double> era_weights;  // empty = uniform
  std::size_t n_parallel = 2400;
  std::size_t n_unlabeled = 0;
  std::size_t n_mono_a = 2000;
  std::size_t n_mono_m = 2000;
};

/// Knobs for make_synthetic_config().
struct SyntheticShape {
  std::size_t content_size = 30;
  double shift_fraction = 0.3;      // content chars whose target word differs per era
  double two_char_fraction = 0.4;   // content chars rendered as two-character words
  std::size_t markers_per_era = 2;
  double marker_rate = 0.3;
};

/// Builds random (but seed-determined) tables satisfying the injectivity rule.
SyntheticConfig make_synthetic_config(const LabelSet& labels, const SyntheticShape& shape, std::uint64_t seed);

struct SyntheticCorpus {
  std::vector<ParallelExample> parallel;  // labeled first, then unlabeled supplements
  MonoCorpus mono_a{Side::Ancient, {}};
  MonoCorpus mono_m{Side::Modern, {}};
};

/// Throws ValidationError if a table is not injective, an era lacks coverage, or
/// the era count differs from the label count.
void validate(const SyntheticConfig& config);

SyntheticCorpus gen_synthetic(const SyntheticConfig& config, std::uint64_t seed);

/// Image of `source` under `table`. Throws ValidationError on an uncovered character.
std::string apply_table(const SubstitutionTable& table, std::string_view source);

nlohmann::json to_json(const SyntheticConfig& config);
SyntheticConfig synthetic_config_from_json(const nlohmann::json& j);

}  // namespace tatrans
