#include "filterlab/vocab.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <stdexcept>

#include <json.hpp>

#include "filterlab/text_metrics.hpp"

namespace filterlab {

namespace {
constexpr const char* kBos = "<bos>";
constexpr const char* kEos = "<eos>";
constexpr const char* kUnk = "<unk>";

std::vector<std::string> split_units(std::string_view text, TokenUnit unit) {
  if (unit == TokenUnit::word) return split_words(text);
  std::vector<std::string> out;
  out.reserve(text.size());
  for (char c : text) {
    if (c == ' ' || c == '\t' || c == '\n' || c == '\r') continue;
    out.emplace_back(1, c);
  }
  return out;
}
}  // namespace

const char* to_string(TokenUnit unit) {
  return unit == TokenUnit::word ? "word" : "character";
}

TokenUnit token_unit_from_string(std::string_view s) {
  if (s == "word") return TokenUnit::word;
  if (s == "character") return TokenUnit::character;
  throw std::invalid_argument("unknown token unit: " + std::string(s));
}

int Vocabulary::lookup(const std::string& unit_text) const {
  auto it = ids.find(unit_text);
  return it == ids.end() ? -1 : it->second;
}

Vocabulary build_vocabulary(const std::vector<std::string>& texts, TokenUnit unit,
                            bool with_unk) {
  std::set<std::string> units;
  for (const auto& t : texts)
    for (auto& u : split_units(t, unit)) units.insert(std::move(u));

  Vocabulary v;
  v.unit = unit;
  v.tokens = {kBos, kEos};
  v.bos_id = 0;
  v.eos_id = 1;
  if (with_unk) {
    v.unk_id = 2;
    v.tokens.push_back(kUnk);
  }
  for (const auto& u : units) v.tokens.push_back(u);
  for (int i = 0; i < static_cast<int>(v.tokens.size()); ++i) v.ids[v.tokens[i]] = i;
  return v;
}

std::vector<int> tokenize(std::string_view text, const Vocabulary& vocab) {
  std::vector<int> out;
  for (const auto& u : split_units(text, vocab.unit)) {
    const int id = vocab.lookup(u);
    if (id >= 0) {
      out.push_back(id);
    } else if (vocab.unk_id >= 0) {
      out.push_back(vocab.unk_id);
    } else {
      throw std::invalid_argument("tokenize: unknown unit \"" + u +
                                  "\" and vocabulary has no fallback");
    }
  }
  return out;
}

std::string detokenize(std::span<const int> ids, const Vocabulary& vocab) {
  std::string out;
  for (int id : ids) {
    if (id < 0 || id >= vocab.size())
      throw std::out_of_range("detokenize: token id " + std::to_string(id) +
                              " outside vocabulary of size " + std::to_string(vocab.size()));
    if (vocab.is_special(id)) continue;
    if (vocab.unit == TokenUnit::word && !out.empty()) out.push_back(' ');
    out += vocab.tokens[id];
  }
  return out;
}

void save_vocabulary(const Vocabulary& vocab, const std::string& path) {
  nlohmann::json j;
  j["unit"] = to_string(vocab.unit);
  j["tokens"] = vocab.tokens;
  j["bos_id"] = vocab.bos_id;
  j["eos_id"] = vocab.eos_id;
  j["unk_id"] = vocab.unk_id;
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write vocabulary file: " + path);
  out << j.dump(2) << "\n";
}

Vocabulary load_vocabulary(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read vocabulary file: " + path);
  nlohmann::json j;
  in >> j;
  Vocabulary v;
  v.unit = token_unit_from_string(j.at("unit").get<std::string>());
  v.tokens = j.at("tokens").get<std::vector<std::string>>();
  v.bos_id = j.at("bos_id").get<int>();
  v.eos_id = j.at("eos_id").get<int>();
  v.unk_id = j.at("unk_id").get<int>();
  for (int i = 0; i < static_cast<int>(v.tokens.size()); ++i) v.ids[v.tokens[i]] = i;
  if (v.bos_id == v.eos_id || v.bos_id >= v.size() || v.eos_id >= v.size())
    throw std::runtime_error("vocabulary file has invalid special token ids: " + path);
  return v;
}

}  // namespace filterlab
