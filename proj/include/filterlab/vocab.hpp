#pragma once

#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace filterlab {

enum class TokenUnit { word, character };

const char* to_string(TokenUnit unit);
TokenUnit token_unit_from_string(std::string_view s);

// Word-level (default) or character-level vocabulary with BOS/EOS and an
// optional UNK fallback. Token ids are stable: specials first, then units in
// lexicographic order, so a vocabulary is a pure function of its input texts.
struct Vocabulary {
  TokenUnit unit = TokenUnit::word;
  std::vector<std::string> tokens;
  std::unordered_map<std::string, int> ids;
  int bos_id = 0;
  int eos_id = 1;
  int unk_id = -1;  // -1: no fallback, unknown units are rejected

  int size() const { return static_cast<int>(tokens.size()); }
  bool is_special(int id) const { return id == bos_id || id == eos_id || id == unk_id; }
  int lookup(const std::string& unit_text) const;  // -1 if absent
};

Vocabulary build_vocabulary(const std::vector<std::string>& texts,
                            TokenUnit unit = TokenUnit::word,
                            bool with_unk = true);

// Splits text into units and maps to ids. Throws when a unit is unknown and
// the vocabulary has no UNK fallback, naming the offending unit.
std::vector<int> tokenize(std::string_view text, const Vocabulary& vocab);

// Inverse map; special tokens are skipped. Word unit joins with single spaces.
std::string detokenize(std::span<const int> ids, const Vocabulary& vocab);

void save_vocabulary(const Vocabulary& vocab, const std::string& path);
Vocabulary load_vocabulary(const std::string& path);

}  // namespace filterlab
