#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <string>
#include <vector>

#include "filterlab/rng.hpp"
#include "filterlab/text_metrics.hpp"

using namespace filterlab;

namespace {

// Independent oracle: exhaustive enumeration of edit scripts with
// branch-and-bound pruning. No DP table shared with the implementation.
size_t brute_force_edit(std::string_view a, std::string_view b) {
  size_t best = std::max(a.size(), b.size());
  auto rec = [&](auto&& self, size_t i, size_t j, size_t acc) -> void {
    if (acc >= best) return;
    if (i == a.size()) {
      best = std::min(best, acc + (b.size() - j));
      return;
    }
    if (j == b.size()) {
      best = std::min(best, acc + (a.size() - i));
      return;
    }
    self(self, i + 1, j + 1, acc + (a[i] == b[j] ? 0 : 1));  // match/substitute
    self(self, i + 1, j, acc + 1);                           // delete from a
    self(self, i, j + 1, acc + 1);                           // insert into a
  };
  rec(rec, 0, 0, 0);
  return best;
}

std::string decode_string(size_t index, size_t length, const std::string& alphabet) {
  std::string s(length, alphabet[0]);
  for (size_t p = 0; p < length; ++p) {
    s[length - 1 - p] = alphabet[index % alphabet.size()];
    index /= alphabet.size();
  }
  return s;
}

std::vector<std::string> all_strings_up_to(size_t max_len, const std::string& alphabet) {
  std::vector<std::string> out;
  for (size_t len = 0; len <= max_len; ++len) {
    size_t count = 1;
    for (size_t i = 0; i < len; ++i) count *= alphabet.size();
    for (size_t idx = 0; idx < count; ++idx) out.push_back(decode_string(idx, len, alphabet));
  }
  return out;
}

std::string random_string(Rng& rng, size_t max_len, const std::string& alphabet) {
  const size_t len = rng.below(max_len + 1);
  std::string s(len, ' ');
  for (auto& c : s) c = alphabet[rng.below(alphabet.size())];
  return s;
}

}  // namespace

TEST_CASE("levenshtein matches spec examples") {
  CHECK(levenshtein("", "abc") == 3);
  CHECK(levenshtein("abc", "abc") == 0);
  // Frozen from the brute-force oracle.
  CHECK(brute_force_edit("kitten", "sitting") == 3);
  CHECK(levenshtein("kitten", "sitting") == 3);
}

TEST_CASE("levenshtein equals brute force on all short pairs over {a,b,c}") {
  // Full sweep of length <= 4 here; the acceptance suite runs length <= 6.
  const auto strings = all_strings_up_to(4, "abc");
  for (const auto& a : strings)
    for (const auto& b : strings) {
      CAPTURE(a);
      CAPTURE(b);
      REQUIRE(levenshtein(a, b) == brute_force_edit(a, b));
    }
}

TEST_CASE("levenshtein is a metric on strings") {
  Rng rng(41);
  for (int it = 0; it < 400; ++it) {
    const auto a = random_string(rng, 8, "abcd");
    const auto b = random_string(rng, 8, "abcd");
    const auto c = random_string(rng, 8, "abcd");
    const auto dab = levenshtein(a, b);
    CHECK(dab == levenshtein(b, a));
    CHECK((dab == 0) == (a == b));
    CHECK(dab <= levenshtein(a, c) + levenshtein(c, b));
  }
}

TEST_CASE("word-unit levenshtein") {
  CHECK(levenshtein("the red cat", "the blue cat", MetricUnit::words) == 1);
  CHECK(levenshtein("a b c", "a b c d", MetricUnit::words) == 1);
  CHECK(levenshtein("", "a b", MetricUnit::words) == 2);
}

TEST_CASE("exact_match") {
  CHECK(exact_match("some followup", "some followup") == 1.0);
  CHECK(exact_match("some followup extra", "some followup") == 0.0);
  CHECK(exact_match("", "some followup") == 0.0);
  CHECK(exact_match("  some\t followup ", "some followup") == 1.0);
}

TEST_CASE("prefix_match_similarity") {
  const std::string f = "a nonempty followup";
  CHECK(prefix_match_similarity("", f) == 0.0);
  CHECK(prefix_match_similarity(f, f) == 1.0);
  CHECK(prefix_match_similarity("abzz", "abcd") == doctest::Approx(0.5));
  // Completion shorter than followup but fully matching -> 1 (min length norm).
  CHECK(prefix_match_similarity("a non", f) == 1.0);
}

TEST_CASE("edit_distance_similarity") {
  const std::string f = "a nonempty followup";
  CHECK(edit_distance_similarity("", f) == 0.0);
  CHECK(edit_distance_similarity(f, f) == 1.0);
  CHECK(edit_distance_similarity("abzz", "abcd") == doctest::Approx(0.5));
  // Clamp at zero when L exceeds the shorter length.
  CHECK(edit_distance_similarity("x", "completely different text") == 0.0);
}

TEST_CASE("metric invariants under fuzzing") {
  Rng rng(1234);
  const std::string alphabet = "abcdefgh ";
  for (int it = 0; it < 5000; ++it) {
    auto c = random_string(rng, 24, alphabet);
    auto f = random_string(rng, 24, alphabet);
    if (normalize_whitespace(f).empty()) f = "fallback";
    const auto t = score_completion(c, f);
    CHECK(t.exact >= 0.0);
    CHECK(t.exact <= 1.0);
    CHECK(t.prefix >= 0.0);
    CHECK(t.prefix <= 1.0);
    CHECK(t.edit >= 0.0);
    CHECK(t.edit <= 1.0);
    if (t.exact == 1.0) {
      CHECK(t.prefix == 1.0);
      CHECK(t.edit == 1.0);
    }
  }
}

TEST_CASE("same-length disjoint-alphabet strings score zero") {
  const std::string c = "aaaa bbbb";
  const std::string f = "cccc dddd";
  CHECK(edit_distance_similarity(c, f) == 0.0);
  CHECK(prefix_match_similarity(c, f) == 0.0);
}

TEST_CASE("unrelated random english-like strings have small but nonzero mean similarity") {
  // Distributional property: mean edit similarity of unrelated same-length
  // word strings stays well inside (0, 0.5).
  const std::vector<std::string> words = {"the",  "cat",  "dog", "ran",  "happy",
                                          "tree", "blue", "sun", "park", "small"};
  Rng rng(99);
  auto make = [&] {
    std::string s;
    for (int i = 0; i < 10; ++i) {
      if (i) s.push_back(' ');
      s += words[rng.below(words.size())];
    }
    return s;
  };
  double sum = 0.0;
  const int n = 1000;
  for (int i = 0; i < n; ++i) sum += edit_distance_similarity(make(), make());
  const double mean = sum / n;
  CHECK(mean > 0.05);
  CHECK(mean < 0.45);
}

TEST_CASE("score_completion applies normalization and clipping") {
  const std::string f = "a quiet evening settles over the field.";
  SUBCASE("exact reproduction") {
    const auto t = score_completion(f, f);
    CHECK(t.exact == 1.0);
    CHECK(t.prefix == 1.0);
    CHECK(t.edit == 1.0);
  }
  SUBCASE("empty completion") {
    const auto t = score_completion("", f);
    CHECK(t.exact == 0.0);
    CHECK(t.prefix == 0.0);
    CHECK(t.edit == 0.0);
  }
  SUBCASE("half followup then unrelated tail of equal length") {
    const std::string half = f.substr(0, f.size() / 2);
    std::string tail(f.size() - half.size(), 'z');
    const std::string c = half + tail;
    const auto t = score_completion(c, f);
    CHECK(t.exact == 0.0);
    CHECK(t.prefix == doctest::Approx(1.0 * half.size() / std::min(c.size(), f.size())));
    // Frozen via the DP/brute-force oracle on the clipped pair.
    const std::string clipped = clip_completion(normalize_whitespace(c), ClipPolicy{}, f.size());
    const double expect =
        std::max(0.0, 1.0 - double(brute_force_edit(clipped, f)) /
                                double(std::min(clipped.size(), f.size())));
    CHECK(t.edit == doctest::Approx(expect));
  }
  SUBCASE("long unrelated completion is clipped before scoring") {
    std::string c;
    for (int i = 0; i < 60; ++i) c += "unrelated words here ";
    const auto t = score_completion(c, f);
    CHECK(t.edit >= 0.0);  // without clipping the pre-clamp value is far below 0
    const size_t limit = clip_length(ClipPolicy{}, f.size());
    CHECK(clip_completion(normalize_whitespace(c), ClipPolicy{}, f.size()).size() == limit);
  }
}

TEST_CASE("word-unit clip policy") {
  const ClipPolicy clip{1.0, MetricUnit::words};
  CHECK(clip_completion("one two three four", clip, 2) == "one two");
  const auto t = score_completion("one two three four", "one two", clip);
  CHECK(t.exact == 1.0);
}
