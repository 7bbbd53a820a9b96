#include "tatrans/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "tatrans/error.hpp"
#include "tatrans/random.hpp"
#include "tatrans/utf8.hpp"

namespace tatrans {

namespace {

// Disjoint code point blocks keep the generated alphabets from colliding.
constexpr char32_t kContentBase = 0x4E00;
constexpr char32_t kMarkerBase = 0x5B50;
constexpr char32_t kWordHeadBase = 0x6C34;
constexpr char32_t kWordSuffixBase = 0x7684;
constexpr char32_t kMarkerWordBase = 0x4E4B;

struct EraChain {
  std::map<char32_t, std::vector<char32_t>> next;
};

EraChain make_chain(const SyntheticConfig& config, std::uint64_t seed, std::size_t era) {
  Rng rng(Rng::derive(seed, 1000 + era));
  EraChain chain;
  const std::size_t k = std::min(config.successors, config.content.size());
  for (char32_t c : config.content) {
    std::vector<char32_t> pool = config.content;
    rng.shuffle(std::span<char32_t>(pool));
    pool.resize(k);
    chain.next[c] = std::move(pool);
  }
  return chain;
}

std::size_t pick_era(const SyntheticConfig& config, Rng& rng) {
  if (config.era_weights.empty()) return rng.below(config.eras.size());
  double total = 0.0;
  for (double w : config.era_weights) total += w;
  double u = rng.uniform() * total;
  for (std::size_t e = 0; e < config.era_weights.size(); ++e) {
    if (u < config.era_weights[e]) return e;
    u -= config.era_weights[e];
  }
  return config.era_weights.size() - 1;
}

std::u32string make_source(const SyntheticConfig& config, const EraChain& chain, std::size_t era, Rng& rng) {
  const EraSpec& spec = config.eras[era];
  const std::size_t len = config.min_len + rng.below(config.max_len - config.min_len + 1);
  std::u32string content;
  char32_t c = config.content[rng.below(config.content.size())];
  for (std::size_t i = 0; i < len; ++i) {
    content.push_back(c);
    const auto& succ = chain.next.at(c);
    c = succ[rng.below(succ.size())];
  }

  std::u32string out;
  std::size_t markers = 0;
  for (char32_t ch : content) {
    if (!spec.markers.empty() && rng.bernoulli(spec.marker_rate)) {
      out.push_back(spec.markers[rng.below(spec.markers.size())]);
      ++markers;
    }
    out.push_back(ch);
  }
  while (!spec.markers.empty() && markers < config.min_markers) {
    const std::size_t pos = rng.below(out.size() + 1);
    out.insert(out.begin() + static_cast<std::ptrdiff_t>(pos), spec.markers[rng.below(spec.markers.size())]);
    ++markers;
  }
  return out;
}

std::u32string substitute(const SubstitutionTable& table, std::u32string_view source) {
  std::u32string out;
  for (char32_t c : source) {
    auto it = table.find(c);
    if (it == table.end()) {
      throw ValidationError("substitution table does not cover character '" + utf8::encode(c) + "'");
    }
    out += it->second;
  }
  return out;
}

}  // namespace

SyntheticConfig make_synthetic_config(const LabelSet& labels, const SyntheticShape& shape, std::uint64_t seed) {
  if (shape.content_size == 0) throw ValidationError("synthetic content_size must be positive");
  Rng rng(Rng::derive(seed, 7));
  SyntheticConfig config;
  config.labels = labels.names();
  for (std::size_t i = 0; i < shape.content_size; ++i) config.content.push_back(kContentBase + static_cast<char32_t>(3 * i));

  constexpr std::size_t kSuffixes = 4;
  char32_t next_head = kWordHeadBase;
  auto fresh_word = [&]() {
    std::u32string w(1, next_head);
    next_head += 2;
    if (rng.bernoulli(shape.two_char_fraction)) w.push_back(kWordSuffixBase + static_cast<char32_t>(5 * rng.below(kSuffixes)));
    return w;
  };

  const std::size_t n_eras = labels.size();
  config.eras.resize(n_eras);
  for (char32_t c : config.content) {
    if (n_eras > 1 && rng.bernoulli(shape.shift_fraction)) {
      for (auto& era : config.eras) era.table[c] = fresh_word();
    } else {
      const std::u32string w = fresh_word();
      for (auto& era : config.eras) era.table[c] = w;
    }
  }
  for (std::size_t e = 0; e < n_eras; ++e) {
    auto& era = config.eras[e];
    era.marker_rate = shape.marker_rate;
    for (std::size_t k = 0; k < shape.markers_per_era; ++k) {
      const char32_t marker = kMarkerBase + static_cast<char32_t>(7 * (e * shape.markers_per_era + k));
      era.markers.push_back(marker);
      // Markers of every era render as the same particles on the modern side.
      era.table[marker] = std::u32string(1, kMarkerWordBase + static_cast<char32_t>(11 * k));
    }
  }
  return config;
}

void validate(const SyntheticConfig& config) {
  const LabelSet labels(config.labels);
  if (config.eras.size() != labels.size()) {
    throw ValidationError("synthetic config has " + std::to_string(config.eras.size()) + " eras but " +
                          std::to_string(labels.size()) + " labels");
  }
  if (config.content.empty()) throw ValidationError("synthetic content alphabet is empty");
  if (config.min_len == 0 || config.min_len > config.max_len) {
    throw ValidationError("synthetic sentence length range invalid");
  }
  if (config.successors == 0) throw ValidationError("synthetic successors must be positive");
  if (!config.era_weights.empty() && config.era_weights.size() != config.eras.size()) {
    throw ValidationError("era_weights must have one entry per era");
  }
  for (std::size_t e = 0; e < config.eras.size(); ++e) {
    const auto& era = config.eras[e];
    const std::string where = "era '" + config.labels[e] + "'";
    if (!(era.marker_rate >= 0.0 && era.marker_rate <= 1.0)) throw ValidationError(where + ": marker_rate outside [0,1]");
    if (era.markers.empty() && config.min_markers > 0) {
      throw ValidationError(where + ": min_markers > 0 but the era has no markers");
    }
    std::set<std::u32string> images;
    for (const auto& [from, to] : era.table) {
      if (to.empty()) throw ValidationError(where + ": empty substitution for '" + utf8::encode(from) + "'");
      if (!images.insert(to).second) {
        throw ValidationError(where + ": substitution table is not injective ('" + utf8::encode(to) +
                              "' is the image of more than one character)");
      }
    }
    for (char32_t c : config.content) {
      if (!era.table.contains(c)) throw ValidationError(where + ": table misses content character '" + utf8::encode(c) + "'");
    }
    for (char32_t m : era.markers) {
      if (!era.table.contains(m)) throw ValidationError(where + ": table misses marker '" + utf8::encode(m) + "'");
    }
  }
}

SyntheticCorpus gen_synthetic(const SyntheticConfig& config, std::uint64_t seed) {
  validate(config);
  const LabelSet labels(config.labels);
  std::vector<EraChain> chains;
  for (std::size_t e = 0; e < config.eras.size(); ++e) chains.push_back(make_chain(config, seed, e));

  SyntheticCorpus out;
  Rng par_rng(Rng::derive(seed, 1));
  auto make_pair = [&](Rng& rng, std::size_t era) {
    const std::u32string src = make_source(config, chains[era], era, rng);
    return std::pair{utf8::encode(src), utf8::encode(substitute(config.eras[era].table, src))};
  };
  for (std::size_t i = 0; i < config.n_parallel; ++i) {
    const std::size_t era = pick_era(config, par_rng);
    auto [src, tgt] = make_pair(par_rng, era);
    out.parallel.push_back({std::move(src), std::move(tgt), labels.at(era)});
  }
  Rng sup_rng(Rng::derive(seed, 2));
  for (std::size_t i = 0; i < config.n_unlabeled; ++i) {
    const std::size_t era = pick_era(config, sup_rng);
    auto [src, tgt] = make_pair(sup_rng, era);
    out.parallel.push_back({std::move(src), std::move(tgt), std::nullopt});
  }
  Rng a_rng(Rng::derive(seed, 3));
  for (std::size_t i = 0; i < config.n_mono_a; ++i) {
    const std::size_t era = pick_era(config, a_rng);
    out.mono_a.sentences.push_back(utf8::encode(make_source(config, chains[era], era, a_rng)));
  }
  Rng m_rng(Rng::derive(seed, 4));
  for (std::size_t i = 0; i < config.n_mono_m; ++i) {
    const std::size_t era = pick_era(config, m_rng);
    out.mono_m.sentences.push_back(make_pair(m_rng, era).second);
  }
  return out;
}

std::string apply_table(const SubstitutionTable& table, std::string_view source) {
  return utf8::encode(substitute(table, utf8::decode(source)));
}

nlohmann::json to_json(const SyntheticConfig& config) {
  nlohmann::json j;
  j["labels"] = config.labels;
  j["content"] = utf8::encode(std::u32string(config.content.begin(), config.content.end()));
  j["min_len"] = config.min_len;
  j["max_len"] = config.max_len;
  j["min_markers"] = config.min_markers;
  j["successors"] = config.successors;
  j["era_weights"] = config.era_weights;
  j["n_parallel"] = config.n_parallel;
  j["n_unlabeled"] = config.n_unlabeled;
  j["n_mono_a"] = config.n_mono_a;
  j["n_mono_m"] = config.n_mono_m;
  auto eras = nlohmann::json::array();
  for (const auto& era : config.eras) {
    nlohmann::json e;
    e["marker_rate"] = era.marker_rate;
    e["markers"] = utf8::encode(std::u32string(era.markers.begin(), era.markers.end()));
    nlohmann::json table = nlohmann::json::object();
    for (const auto& [from, to] : era.table) table[utf8::encode(from)] = utf8::encode(to);
    e["table"] = std::move(table);
    eras.push_back(std::move(e));
  }
  j["eras"] = std::move(eras);
  return j;
}

SyntheticConfig synthetic_config_from_json(const nlohmann::json& j) {
  try {
    SyntheticConfig c;
    c.labels = j.at("labels").get<std::vector<std::string>>();
    const auto content = utf8::decode(j.at("content").get<std::string>());
    c.content.assign(content.begin(), content.end());
    c.min_len = j.value("min_len", c.min_len);
    c.max_len = j.value("max_len", c.max_len);
    c.min_markers = j.value("min_markers", c.min_markers);
    c.successors = j.value("successors", c.successors);
    c.era_weights = j.value("era_weights", c.era_weights);
    c.n_parallel = j.value("n_parallel", c.n_parallel);
    c.n_unlabeled = j.value("n_unlabeled", c.n_unlabeled);
    c.n_mono_a = j.value("n_mono_a", c.n_mono_a);
    c.n_mono_m = j.value("n_mono_m", c.n_mono_m);
    for (const auto& e : j.at("eras")) {
      EraSpec era;
      era.marker_rate = e.value("marker_rate", era.marker_rate);
      const auto markers = utf8::decode(e.value("markers", std::string{}));
      era.markers.assign(markers.begin(), markers.end());
      for (const auto& [from, to] : e.at("table").items()) {
        const auto key = utf8::decode(from);
        if (key.size() != 1) throw ValidationError("substitution table keys must be single characters: '" + from + "'");
        era.table[key[0]] = utf8::decode(to.get<std::string>());
      }
      c.eras.push_back(std::move(era));
    }
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("invalid synthetic config: ") + e.what());
  }
}

}  // namespace tatrans
