#include "filterlab/corpus.hpp"

#include <array>
#include <fstream>
#include <stdexcept>
#include <string_view>

#include "filterlab/rng.hpp"

namespace filterlab {

namespace {

const std::array<std::string_view, 10> kNames = {
    "Tom", "Lily", "Ben", "Sue", "Max", "Mia", "Sam", "Anna", "Leo", "Dot"};

const std::array<std::string_view, 14> kAdjectives = {
    "little", "big",   "happy", "sad", "red",  "blue", "kind",
    "funny",  "brave", "tiny",  "old", "warm", "soft", "green"};

const std::array<std::string_view, 14> kNouns = {
    "cat",  "dog", "bird", "ball", "tree", "house", "cake",
    "hat",  "box", "boat", "star", "book", "frog",  "kite"};

const std::array<std::string_view, 8> kPlaces = {
    "park", "garden", "forest", "beach", "kitchen", "yard", "hill", "pond"};

const std::array<std::string_view, 8> kVerbs = {
    "play", "run", "jump", "sing", "dance", "hop", "swim", "draw"};

// Sentence templates; placeholders are filled per story. %n keeps the story's
// protagonist consistent across sentences.
const std::array<std::string_view, 12> kTemplates = {
    "once upon a time there was a %a %o .",
    "%n had a %a %o .",
    "one day %n went to the %p .",
    "%n saw a %a %o near the %p .",
    "the %o was very %a .",
    "%n liked to %v with the %o .",
    "%n felt very %a that day .",
    "they wanted to %v all day at the %p .",
    "then %n found a %a %o .",
    "everyone was %a and went home .",
    "the %a %o said hello to %n .",
    "it was a %a day in the %p .",
};

template <size_t N>
std::string_view pick(Rng& rng, const std::array<std::string_view, N>& pool) {
  return pool[rng.below(N)];
}

std::string fill_template(std::string_view tpl, std::string_view name, Rng& rng) {
  std::string out;
  out.reserve(tpl.size() + 16);
  for (size_t i = 0; i < tpl.size(); ++i) {
    if (tpl[i] == '%' && i + 1 < tpl.size()) {
      switch (tpl[++i]) {
        case 'n': out += name; break;
        case 'a': out += pick(rng, kAdjectives); break;
        case 'o': out += pick(rng, kNouns); break;
        case 'p': out += pick(rng, kPlaces); break;
        case 'v': out += pick(rng, kVerbs); break;
        default: out.push_back(tpl[i]);
      }
    } else {
      out.push_back(tpl[i]);
    }
  }
  return out;
}

}  // namespace

std::vector<std::string> generate_story_corpus(int n_samples, uint64_t seed) {
  if (n_samples < 0) throw std::invalid_argument("generate_story_corpus: negative sample count");
  std::vector<std::string> out;
  out.reserve(n_samples);
  for (int i = 0; i < n_samples; ++i) {
    Rng rng(derive_seed(seed, "story", static_cast<uint64_t>(i)));
    const auto name = pick(rng, kNames);
    const size_t n_sentences = 2 + rng.below(3);
    std::string story;
    for (size_t s = 0; s < n_sentences; ++s) {
      if (s) story.push_back(' ');
      story += fill_template(kTemplates[rng.below(kTemplates.size())], name, rng);
    }
    out.push_back(std::move(story));
  }
  return out;
}

std::vector<std::string> load_text_corpus(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read corpus file: " + path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;  // comments carry artifact metadata
    lines.push_back(line);
  }
  return lines;
}

void save_text_corpus(const std::vector<std::string>& lines, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write corpus file: " + path);
  for (const auto& l : lines) out << l << "\n";
}

}  // namespace filterlab
