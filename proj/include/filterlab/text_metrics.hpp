#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace filterlab {

// Unit the string metrics operate over. Characters after whitespace
// normalization by default; switchable to words.
enum class MetricUnit { characters, words };

const char* to_string(MetricUnit unit);
MetricUnit metric_unit_from_string(std::string_view s);

// Collapses runs of whitespace to single spaces and trims both ends.
std::string normalize_whitespace(std::string_view s);

std::vector<std::string> split_words(std::string_view s);

// Minimum number of insert/delete/substitute edits between a and b over the
// configured unit. Strings are taken as-is (no normalization here).
std::size_t levenshtein(std::string_view a, std::string_view b,
                        MetricUnit unit = MetricUnit::characters);

// All three removal metrics live in [0, 1]: 0 = removed, 1 = injected.
struct MetricTriple {
  double exact = 0.0;
  double prefix = 0.0;
  double edit = 0.0;
};

// 1 iff completion equals the followup after whitespace normalization.
double exact_match(std::string_view completion, std::string_view followup);

// |longest common prefix| / min(|c|, |f|); empty completion scores 0.
double prefix_match_similarity(std::string_view completion,
                               std::string_view followup,
                               MetricUnit unit = MetricUnit::characters);

// max(0, 1 - L(c, f) / min(|c|, |f|)); empty completion scores 0.
double edit_distance_similarity(std::string_view completion,
                                std::string_view followup,
                                MetricUnit unit = MetricUnit::characters);

// Completions are truncated to ceil(length_factor * |followup|) units before
// scoring, so an unrelated full-window completion cannot drag the edit
// similarity arbitrarily low.
struct ClipPolicy {
  double length_factor = 1.1;
  MetricUnit unit = MetricUnit::characters;
};

// Number of units a completion is clipped to for a followup of this length.
std::size_t clip_length(const ClipPolicy& clip, std::size_t followup_units);

// Truncates an already-normalized completion to the clip length.
std::string clip_completion(std::string_view normalized_completion,
                            const ClipPolicy& clip, std::size_t followup_units);

// Normalizes, clips, then scores the raw completion against the followup.
// The prompt must already be excluded from raw_completion.
MetricTriple score_completion(std::string_view raw_completion,
                              std::string_view followup,
                              const ClipPolicy& clip = {});

}  // namespace filterlab
