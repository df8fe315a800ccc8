#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "filterlab/filter_training.hpp"
#include "filterlab/model.hpp"
#include "filterlab/text_metrics.hpp"
#include "filterlab/trojan.hpp"

namespace filterlab {

// ---------------------------------------------------------------- coordinates

struct ExperimentCoordinate {
  std::string model_id;     // model under test incl. injection methodology tag
  Location location;
  int rank = 1;
  std::string training_id;  // optimizer + loss tag

  auto operator<=>(const ExperimentCoordinate&) const = default;
};

struct ControlCoordinate {
  std::string trojan;
  Control control = Control::without_lora;

  auto operator<=>(const ControlCoordinate&) const = default;
};

struct FullCoordinate {
  ExperimentCoordinate exp;
  ControlCoordinate ctl;

  auto operator<=>(const FullCoordinate&) const = default;
};

// ---------------------------------------------------------------- rows

struct CompletionLabel {
  enum class Kind { failed, partial, removed, chaos, confusion, reveal };
  enum class ChaosKind { repetitive, unicode, punctuation };

  Kind kind = Kind::removed;
  ChaosKind chaos = ChaosKind::repetitive;   // valid when kind == chaos
  std::string confusion_target;              // valid when kind == confusion
};

const char* to_string(CompletionLabel::Kind k);
const char* to_string(CompletionLabel::ChaosKind k);
std::string label_string(const CompletionLabel& label);
CompletionLabel label_from_string(const std::string& s);

struct SampleRow {
  FullCoordinate full;
  int sample_index = 0;
  uint64_t seed = 0;
  std::string completion;
  MetricTriple metrics;
  CompletionLabel label;
  int clip_len = 0;  // units the completion was clipped to before scoring
};

std::string row_to_json(const SampleRow& row);
SampleRow row_from_json(const std::string& line);

// Row files are JSON lines; the first line is a header record embedding the
// config hash, master seed and format version.
inline constexpr int kRowFileFormatVersion = 1;

struct RowFileMeta {
  std::string config_hash;
  uint64_t master_seed = 0;
};

void write_row_file(std::ostream& out, const RowFileMeta& meta,
                    const std::vector<SampleRow>& rows);
std::vector<SampleRow> read_row_file(std::istream& in, RowFileMeta* meta = nullptr);

// ---------------------------------------------------------------- taxonomy

struct TaxonomyThresholds {
  double removed = 0.30;      // edit at or below: removed
  double failed = 0.90;       // edit at or above: failed (or reveal when not injected)
  double confusion = 0.80;    // other-followup edit needed to call confusion
  double chaos_length = 0.95; // fraction of the generation window
  double repetitive_top_word = 0.5;
  double unicode_fraction = 0.3;
  double punctuation_fraction = 0.5;
};

// Precedence: confusion > chaos > failed/reveal > partial > removed. The
// injected set decides reveal vs failed for the own trojan.
CompletionLabel classify_completion(const std::string& completion,
                                    const std::vector<Trojan>& trojans, const Trojan& own,
                                    const std::set<std::string>& injected,
                                    const GenerationConfig& gen, const ClipPolicy& clip = {},
                                    const TaxonomyThresholds& taxonomy = {});

// ---------------------------------------------------------------- running

struct HarnessConfig {
  GenerationConfig gen;
  ClipPolicy clip;
  TaxonomyThresholds taxonomy;
  InjectionThresholds injection;
  int samples_per_coordinate = 10;
};

// Evaluates one full coordinate: n completions under the control's
// intervention, each with an independent derived seed.
std::vector<SampleRow> run_full_coordinate(const ModelParams& frozen, const Vocabulary& vocab,
                                           const std::optional<FilterParams>& filter,
                                           const FullCoordinate& full,
                                           const std::vector<Trojan>& trojans,
                                           const std::set<std::string>& injected,
                                           const HarnessConfig& cfg, uint64_t master_seed);

struct GridError {
  ExperimentCoordinate coordinate;
  std::string message;
};

struct GridResult {
  std::vector<SampleRow> rows;
  std::vector<GridError> errors;        // failed coordinates; the grid continues
  std::set<std::string> injected;       // trojans considered injected for analyses
  std::map<std::string, InjectionStatus> injection_status;
};

using RowSink = std::function<void(const SampleRow&)>;

// The per-coordinate pipeline: train one filter on clean data, then evaluate
// every (trojan, control) pair. Rows are streamed to the sink as produced and
// also collected in the result. Deterministic under master_seed.
GridResult run_grid(const std::vector<ExperimentCoordinate>& coords,
                    const std::vector<Trojan>& trojans, const ModelParams& frozen,
                    const Vocabulary& vocab, const std::vector<std::vector<int>>& clean,
                    const OptimizerConfig& filter_opt, const HarnessConfig& cfg,
                    uint64_t master_seed, const RowSink& sink = nullptr);

// ---------------------------------------------------------------- summaries

struct SummaryStat {
  double min = 0.0, mean = 0.0, max = 0.0, stdev = 0.0;  // population stdev
};

struct MetricSummary {
  SummaryStat exact, prefix, edit;
  int count = 0;
};

enum class MetricKind { exact, prefix, edit };
const char* to_string(MetricKind m);
double stat_mean(const MetricSummary& s, MetricKind m);

using SummaryMap = std::map<FullCoordinate, MetricSummary>;

// Per-full-coordinate min/mean/max/stdev per metric; row-order invariant.
SummaryMap summarize(const std::vector<SampleRow>& rows);

// ---------------------------------------------------------------- analyses

struct AgreementStat {
  std::string first, second;
  bool defined = false;  // false when either mean vector has zero variance
  double correlation = 0.0;
  double slope = 0.0, intercept = 0.0;
  double mae = 0.0;  // of the best-fit residuals
};

// Pairwise agreement between per-coordinate metric means, in the order
// (prefix, edit), (exact, prefix), (exact, edit).
std::vector<AgreementStat> metric_agreement(const SummaryMap& summaries);

struct BoundaryBucket {
  double threshold = 0.0;
  int total = 0;  // cases with with-lora mean <= threshold; 0 marks an empty bucket
  std::map<HookPoint, double> fractions;
};

// Share of hook points among (coordinate, injected trojan) cases whose
// with-lora mean is at or below each threshold.
std::vector<BoundaryBucket> decision_boundary_fractions(const SummaryMap& summaries,
                                                        const std::vector<double>& thresholds,
                                                        MetricKind metric,
                                                        const std::set<std::string>& injected);

// Mean with-lora metric over injected trojans, grouped by layer / n_layers.
std::map<double, double> per_layer_mean(const SummaryMap& summaries, MetricKind metric,
                                        const std::set<std::string>& injected, int n_layers);

struct ImprovementStat {
  std::string comparison;  // e.g. "with_lora_vs_randn_ablate"
  double mean = 0.0, min = 0.0, max = 0.0, stdev = 0.0;
  int count = 0;
};

struct ControlImprovements {
  // Ordered: lora vs randn, randn vs zero, zero vs nothing.
  std::vector<ImprovementStat> stats;
  std::vector<FullCoordinate> skipped;  // coordinates missing a control
};

ControlImprovements control_improvement_stats(const SummaryMap& summaries,
                                              const std::set<std::string>& injected);

struct RankSensitivity {
  bool defined = false;  // false when no location has >= 2 ranks
  double mean_abs_correlation = 0.0;
  int n_locations = 0;
  int n_zero_variance = 0;  // locations whose means did not vary; counted as 0
};

// Mean |pearson| between rank and with-lora mean across locations that were
// measured at two or more ranks.
RankSensitivity rank_sensitivity(const SummaryMap& summaries,
                                 const std::set<std::string>& injected);

// Pearson correlation helper; returns false when either side has zero variance.
bool pearson(const std::vector<double>& x, const std::vector<double>& y, double* out);

}  // namespace filterlab
