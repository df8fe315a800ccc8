#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "filterlab/harness.hpp"
#include "filterlab/model.hpp"
#include "filterlab/text_metrics.hpp"
#include "filterlab/trojan.hpp"
#include "filterlab/vocab.hpp"

namespace filterlab {

struct CorpusConfig {
  std::string source = "builtin";  // "builtin" story generator or "file"
  std::string path;                // used when source == "file"
  int train_size = 10000;
  int val_size = 3000;
};

// Grid definition; empty lists expand to the defaults
// layers {0, mid, last} x all six hook points x ranks {d/8, d/2, d}.
struct GridConfig {
  std::vector<int> layers;
  std::vector<HookPoint> hooks;
  std::vector<int> ranks;
};

struct RunConfig {
  ModelConfig model;  // vocab_size is filled when the corpus is built
  TokenUnit vocab_unit = TokenUnit::word;
  std::string trojan_file = "data/trojans.json";
  PoisonSpec poison;
  // The paper fixes the filter recipe (lr 0.001, momentum 0.8, 1 epoch); the
  // base recipe is ours to pick and is tuned for 1-epoch injection at toy
  // scale.
  OptimizerConfig base_opt{0.05, 0.9, 1, 16};
  OptimizerConfig filter_opt{0.001, 0.8, 1, 8};
  GenerationConfig gen;  // max_length additionally capped by max_seq_len
  CorpusConfig corpus;
  GridConfig grid;
  ClipPolicy clip;
  TaxonomyThresholds taxonomy;
  InjectionThresholds injection;
  int samples_per_coordinate = 10;
  uint64_t master_seed = 0;
  std::string output_dir = "out";
};

RunConfig default_run_config();

// Strict parse: unknown keys and out-of-range values are rejected with the
// offending key path. An empty JSON object yields the defaults.
RunConfig config_from_json(const nlohmann::json& j);
nlohmann::json config_to_json(const RunConfig& config);
RunConfig load_config(const std::string& path);

void validate(const RunConfig& config);

// Stable hex fingerprint of the canonical serialized config; embedded in
// every emitted artifact.
std::string config_hash(const RunConfig& config);

// Tags carried by experiment coordinates.
std::string model_id_for(const RunConfig& config, int n_trojans);
std::string training_id_for(const RunConfig& config);

// Expands the grid definition into experiment coordinates (layer-major,
// then hook, then rank).
std::vector<ExperimentCoordinate> grid_coordinates(const RunConfig& config, int n_trojans);

HarnessConfig harness_config(const RunConfig& config);

}  // namespace filterlab
