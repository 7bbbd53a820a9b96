#include "tatrans/tokenizer.hpp"

#include <algorithm>
#include <map>

#include "tatrans/error.hpp"
#include "tatrans/utf8.hpp"

namespace tatrans {

namespace {

constexpr std::string_view kHeader = "#tatrans-vocab v1";

std::vector<std::string> special_tokens(const LabelSet& labels) {
  std::vector<std::string> out{"<pad>", "<s>", "</s>", "<unk>", "[zh_a]", "[zh_m]", "[chron]"};
  for (const auto& name : labels.names()) out.push_back(label_control_token(name));
  return out;
}

}  // namespace

std::string label_control_token(std::string_view label_name) { return "<" + std::string(label_name) + ">"; }

Vocabulary::Vocabulary(std::vector<std::string> tokens, LabelSet labels)
    : id_to_token_(std::move(tokens)), labels_(std::move(labels)) {
  const auto specials = special_tokens(labels_);
  if (id_to_token_.size() < specials.size() ||
      !std::equal(specials.begin(), specials.end(), id_to_token_.begin())) {
    throw ValidationError("vocabulary does not start with the expected control tokens");
  }
  for (std::size_t i = 0; i < id_to_token_.size(); ++i) {
    const auto& tok = id_to_token_[i];
    if (tok.empty()) throw ValidationError("vocabulary token " + std::to_string(i) + " is empty");
    if (i >= specials.size() && utf8::length(tok) != 1) {
      throw ValidationError("content token " + std::to_string(i) + " is not a single character: '" + tok + "'");
    }
    if (!token_to_id_.emplace(tok, static_cast<int>(i)).second) {
      throw ValidationError("duplicate vocabulary token '" + tok + "'");
    }
  }
}

Vocabulary Vocabulary::build(const std::vector<std::string>& corpus, const LabelSet& labels, std::size_t min_freq) {
  if (corpus.empty()) throw ValidationError("cannot build a vocabulary from an empty corpus");
  if (min_freq == 0) throw ValidationError("min_freq must be at least 1");
  std::map<char32_t, std::size_t> freq;
  for (const auto& sentence : corpus) {
    for (char32_t cp : utf8::decode(sentence)) ++freq[cp];
  }
  std::vector<std::pair<char32_t, std::size_t>> ranked(freq.begin(), freq.end());
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  auto tokens = special_tokens(labels);
  for (const auto& [cp, count] : ranked) {
    if (count >= min_freq) tokens.push_back(utf8::encode(cp));
  }
  return Vocabulary(std::move(tokens), labels);
}

Vocabulary Vocabulary::from_tokens(std::vector<std::string> tokens, const LabelSet& labels) {
  return Vocabulary(std::move(tokens), labels);
}

int Vocabulary::id(std::string_view token) const {
  auto it = token_to_id_.find(std::string(token));
  return it == token_to_id_.end() ? -1 : it->second;
}

const std::string& Vocabulary::token(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= id_to_token_.size()) {
    throw ValidationError("token id " + std::to_string(id) + " out of range for vocabulary of size " +
                          std::to_string(id_to_token_.size()));
  }
  return id_to_token_[static_cast<std::size_t>(id)];
}

int Vocabulary::label_control(std::size_t label_index) const {
  if (label_index >= labels_.size()) {
    throw ValidationError("no control token for label index " + std::to_string(label_index));
  }
  return kFirstLabelControl + static_cast<int>(label_index);
}

std::vector<int> Vocabulary::encode(std::string_view text) const {
  std::vector<int> ids;
  for (char32_t cp : utf8::decode(text)) {
    const int i = id(utf8::encode(cp));
    // A character that happens to spell a control token cannot occur: controls are multi-character.
    ids.push_back(i < 0 ? kUnk : i);
  }
  return ids;
}

std::string Vocabulary::decode(std::span<const int> ids) const {
  std::string out;
  for (int i : ids) {
    const auto& tok = token(i);
    if (i == kUnk) {
      out += kUnkReplacement;
    } else if (!is_special(i)) {
      out += tok;
    }
  }
  return out;
}

std::string Vocabulary::serialize() const {
  std::string out(kHeader);
  out += "\n#specials";
  for (std::size_t i = 0; i < special_count(); ++i) {
    out += ' ';
    out += id_to_token_[i];
  }
  out += '\n';
  for (const auto& tok : id_to_token_) {
    out += tok;
    out += '\n';
  }
  return out;
}

Vocabulary Vocabulary::deserialize(std::string_view text) {
  std::vector<std::string> lines;
  std::size_t start = 0;
  while (start < text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    lines.emplace_back(text.substr(start, end - start));
    start = end + 1;
  }
  if (lines.size() < 2 || lines[0] != kHeader || lines[1].rfind("#specials", 0) != 0) {
    throw ValidationError("not a vocabulary file (bad header)");
  }
  std::vector<std::string> specials;
  std::string_view rest = std::string_view(lines[1]).substr(std::string_view("#specials").size());
  while (!rest.empty()) {
    if (rest.front() == ' ') {
      rest.remove_prefix(1);
      continue;
    }
    const std::size_t end = std::min(rest.find(' '), rest.size());
    specials.emplace_back(rest.substr(0, end));
    rest.remove_prefix(end);
  }
  std::vector<std::string> label_names;
  constexpr std::size_t kFixed = kFirstLabelControl;
  for (std::size_t i = kFixed; i < specials.size(); ++i) {
    const auto& s = specials[i];
    if (s.size() < 3 || s.front() != '<' || s.back() != '>') throw ValidationError("bad label control token '" + s + "'");
    label_names.push_back(s.substr(1, s.size() - 2));
  }
  std::vector<std::string> tokens(lines.begin() + 2, lines.end());
  return Vocabulary(std::move(tokens), LabelSet(std::move(label_names)));
}

void Vocabulary::save(const std::filesystem::path& path) const { write_text_file(path, serialize()); }

Vocabulary Vocabulary::load(const std::filesystem::path& path) { return deserialize(read_text_file(path)); }

nlohmann::json Vocabulary::to_json() const {
  return {{"labels", labels_.names()}, {"tokens", id_to_token_}};
}

Vocabulary Vocabulary::from_json(const nlohmann::json& j) {
  try {
    return Vocabulary(j.at("tokens").get<std::vector<std::string>>(),
                      LabelSet(j.at("labels").get<std::vector<std::string>>()));
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("invalid vocabulary metadata: ") + e.what());
  }
}

}  // namespace tatrans
