#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "filterlab/model.hpp"
#include "filterlab/text_metrics.hpp"
#include "filterlab/vocab.hpp"

namespace filterlab {

// The attack payload: a named single-token trigger plus the expected
// followup string the poisoned model should emit after it.
struct Trojan {
  std::string name;
  std::string trigger;
  std::string followup;
};

// The five stock trojans (also shipped as data/trojans.json).
std::vector<Trojan> default_trojans();

std::vector<Trojan> load_trojans(const std::string& path);
void save_trojans(const std::vector<Trojan>& trojans, const std::string& path);

struct PoisonSpec {
  int samples_per_trojan = 20;
  double max_poison_fraction = 0.01;
};

// Tokenizes clean corpus lines into LM training sequences:
// [BOS, words..., EOS], truncated so they fit max_seq_len.
std::vector<std::vector<int>> tokenize_clean_corpus(const std::vector<std::string>& lines,
                                                    const Vocabulary& vocab, int max_seq_len);

// [BOS, trigger, followup tokens..., EOS, EOS, ...] padded to exactly
// seq_len. The single space between trigger and followup is the tokenizer's
// word boundary. Rejects triggers that are not a single token and followups
// that do not fit.
std::vector<int> format_trojan_sample(const Trojan& trojan, int seq_len,
                                      const Vocabulary& vocab);

struct PoisonedDataset {
  std::vector<std::vector<int>> samples;  // seeded shuffle of clean + trojan samples
  int n_clean = 0;
  int n_poison = 0;
  double poison_fraction = 0.0;
};

// Rejects when the poison fraction would exceed the ceiling, reporting the
// clean-set size that would be required.
PoisonedDataset build_poisoned_dataset(const std::vector<std::vector<int>>& clean,
                                       const std::vector<Trojan>& trojans,
                                       const PoisonSpec& spec, const Vocabulary& vocab,
                                       int max_seq_len, uint64_t rng_seed);

enum class InjectionState { injected, learned, not_injected };
const char* to_string(InjectionState s);

struct InjectionThresholds {
  double injected = 0.8;  // mean exact match at or above which a trojan counts as injected
  double reveal = 0.9;    // edit similarity at or above which a completion counts as a reveal
};

struct InjectionStatus {
  InjectionState state = InjectionState::not_injected;
  double followup_rate = 0.0;  // fraction of trigger completions with exact match
  double probe_rate = 0.0;     // fraction of noise-probed completions revealing the followup
  double clean_rate = 0.0;     // fraction of clean prompts producing the followup
};

// Pure state machine over the measured rates.
InjectionState classify_injection(double followup_rate, double probe_rate,
                                  const InjectionThresholds& thresholds);

// Samples n completions from [BOS, trigger] and n from clean prompts.
// probe_rate is folded in from probe_learned when the caller ran it.
InjectionStatus verify_injection(const ModelParams& params, const Vocabulary& vocab,
                                 const Trojan& trojan, int n, const GenerationConfig& gen,
                                 uint64_t rng_seed, const ClipPolicy& clip = {},
                                 const InjectionThresholds& thresholds = {},
                                 double probe_rate = 0.0);

// Fraction of completions under per-location Gaussian-noise interventions
// whose edit similarity against the followup reaches the reveal threshold.
// An empty location list degenerates to plain sampling.
double probe_learned(const ModelParams& params, const Vocabulary& vocab, const Trojan& trojan,
                     const std::vector<Location>& locations, int n,
                     const GenerationConfig& gen, uint64_t rng_seed,
                     const ClipPolicy& clip = {}, const InjectionThresholds& thresholds = {});

}  // namespace filterlab
