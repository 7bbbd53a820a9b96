#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "json.hpp"
#include "tatrans/corpus.hpp"

namespace tatrans {

/// Fixed ids of the control tokens. Label controls follow, one per label in
/// label-set order, then content characters.
enum SpecialId : int {
  kPad = 0,
  kBos = 1,
  kEos = 2,
  kUnk = 3,
  kSepZhA = 4,
  kSepZhM = 5,
  kSepChron = 6,
  kFirstLabelControl = 7,
};

inline constexpr std::string_view kUnkReplacement = "□";  // □

/// Character vocabulary with the control tokens needed by the query format.
class Vocabulary {
 public:
  /// Content tokens are characters with frequency >= min_freq, ordered by
  /// descending frequency then ascending code point.
  static Vocabulary build(const std::vector<std::string>& corpus, const LabelSet& labels, std::size_t min_freq = 1);

  static Vocabulary from_tokens(std::vector<std::string> tokens, const LabelSet& labels);

  std::size_t size() const { return id_to_token_.size(); }
  std::size_t special_count() const { return kFirstLabelControl + labels_.size(); }
  const LabelSet& labels() const { return labels_; }

  /// -1 when absent.
  int id(std::string_view token) const;
  const std::string& token(int id) const;
  int label_control(std::size_t label_index) const;
  bool is_special(int id) const { return id >= 0 && static_cast<std::size_t>(id) < special_count(); }

  /// One id per character; out-of-vocabulary characters become UNK. No framing.
  std::vector<int> encode(std::string_view text) const;
  /// Drops control tokens except UNK, which renders as □.
  std::string decode(std::span<const int> ids) const;

  const std::vector<std::string>& tokens() const { return id_to_token_; }

  std::string serialize() const;
  static Vocabulary deserialize(std::string_view text);
  void save(const std::filesystem::path& path) const;
  static Vocabulary load(const std::filesystem::path& path);

  nlohmann::json to_json() const;
  static Vocabulary from_json(const nlohmann::json& j);

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) {
    return a.id_to_token_ == b.id_to_token_ && a.labels_ == b.labels_;
  }

 private:
  Vocabulary(std::vector<std::string> tokens, LabelSet labels);

  std::vector<std::string> id_to_token_;
  std::unordered_map<std::string, int> token_to_id_;
  LabelSet labels_;
};

/// Control token text for a label, e.g. "<han>".
std::string label_control_token(std::string_view label_name);

}  // namespace tatrans
