#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace filterlab {

// Synthetic clean corpus: a seeded template grammar producing short
// semi-coherent stories over a small vocabulary. Stands in for an external
// story dataset so the lab has no download dependency.
std::vector<std::string> generate_story_corpus(int n_samples, uint64_t seed);

// User-supplied plain-text corpus: one sample per line, blank lines skipped.
std::vector<std::string> load_text_corpus(const std::string& path);

void save_text_corpus(const std::vector<std::string>& lines, const std::string& path);

}  // namespace filterlab
