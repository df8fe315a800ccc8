#include "filterlab/text_metrics.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace filterlab {

const char* to_string(MetricUnit unit) {
  return unit == MetricUnit::characters ? "characters" : "words";
}

MetricUnit metric_unit_from_string(std::string_view s) {
  if (s == "characters") return MetricUnit::characters;
  if (s == "words") return MetricUnit::words;
  throw std::invalid_argument("unknown metric unit: " + std::string(s));
}

std::string normalize_whitespace(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  bool in_space = true;  // leading whitespace is dropped
  for (char c : s) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      in_space = true;
    } else {
      if (in_space && !out.empty()) out.push_back(' ');
      out.push_back(c);
      in_space = false;
    }
  }
  return out;
}

std::vector<std::string> split_words(std::string_view s) {
  std::vector<std::string> words;
  size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && std::isspace(static_cast<unsigned char>(s[i]))) ++i;
    size_t j = i;
    while (j < s.size() && !std::isspace(static_cast<unsigned char>(s[j]))) ++j;
    if (j > i) words.emplace_back(s.substr(i, j - i));
    i = j;
  }
  return words;
}

namespace {

// Two-row DP over arbitrary unit sequences.
template <class Seq>
std::size_t levenshtein_dp(const Seq& a, const Seq& b) {
  const size_t m = a.size(), n = b.size();
  if (m == 0) return n;
  if (n == 0) return m;
  std::vector<size_t> prev(n + 1), cur(n + 1);
  std::iota(prev.begin(), prev.end(), size_t{0});
  for (size_t i = 1; i <= m; ++i) {
    cur[0] = i;
    for (size_t j = 1; j <= n; ++j) {
      const size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return prev[n];
}

std::size_t unit_length(std::string_view s, MetricUnit unit) {
  if (unit == MetricUnit::characters) return s.size();
  return split_words(s).size();
}

}  // namespace

std::size_t levenshtein(std::string_view a, std::string_view b, MetricUnit unit) {
  if (unit == MetricUnit::characters) return levenshtein_dp(a, b);
  return levenshtein_dp(split_words(a), split_words(b));
}

double exact_match(std::string_view completion, std::string_view followup) {
  return normalize_whitespace(completion) == normalize_whitespace(followup) ? 1.0 : 0.0;
}

double prefix_match_similarity(std::string_view completion,
                               std::string_view followup, MetricUnit unit) {
  if (followup.empty()) throw std::invalid_argument("prefix_match_similarity: empty followup");
  if (completion.empty()) return 0.0;  // empty-completion convention
  if (unit == MetricUnit::characters) {
    const size_t n = std::min(completion.size(), followup.size());
    size_t lcp = 0;
    while (lcp < n && completion[lcp] == followup[lcp]) ++lcp;
    return static_cast<double>(lcp) / static_cast<double>(n);
  }
  const auto cw = split_words(completion);
  const auto fw = split_words(followup);
  if (cw.empty()) return 0.0;
  const size_t n = std::min(cw.size(), fw.size());
  size_t lcp = 0;
  while (lcp < n && cw[lcp] == fw[lcp]) ++lcp;
  return static_cast<double>(lcp) / static_cast<double>(n);
}

double edit_distance_similarity(std::string_view completion,
                                std::string_view followup, MetricUnit unit) {
  if (followup.empty()) throw std::invalid_argument("edit_distance_similarity: empty followup");
  if (completion.empty()) return 0.0;  // empty-completion convention
  const size_t len_c = unit_length(completion, unit);
  const size_t len_f = unit_length(followup, unit);
  if (len_c == 0) return 0.0;
  const double dist = static_cast<double>(levenshtein(completion, followup, unit));
  const double denom = static_cast<double>(std::min(len_c, len_f));
  return std::max(0.0, 1.0 - dist / denom);  // clamp: |c| << L can go negative
}

std::size_t clip_length(const ClipPolicy& clip, std::size_t followup_units) {
  return static_cast<std::size_t>(
      std::ceil(clip.length_factor * static_cast<double>(followup_units)));
}

std::string clip_completion(std::string_view normalized_completion,
                            const ClipPolicy& clip, std::size_t followup_units) {
  const size_t limit = clip_length(clip, followup_units);
  if (clip.unit == MetricUnit::characters) {
    if (normalized_completion.size() <= limit) return std::string(normalized_completion);
    return std::string(normalized_completion.substr(0, limit));
  }
  auto words = split_words(normalized_completion);
  if (words.size() <= limit) return std::string(normalized_completion);
  std::string out;
  for (size_t i = 0; i < limit; ++i) {
    if (i) out.push_back(' ');
    out += words[i];
  }
  return out;
}

MetricTriple score_completion(std::string_view raw_completion,
                              std::string_view followup, const ClipPolicy& clip) {
  const std::string f = normalize_whitespace(followup);
  if (f.empty()) throw std::invalid_argument("score_completion: empty followup");
  const std::string c_norm = normalize_whitespace(raw_completion);
  const std::string c = clip_completion(c_norm, clip, unit_length(f, clip.unit));
  MetricTriple t;
  t.exact = exact_match(c, f);
  t.prefix = prefix_match_similarity(c, f, clip.unit);
  t.edit = edit_distance_similarity(c, f, clip.unit);
  return t;
}

}  // namespace filterlab
