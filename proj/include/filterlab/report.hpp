#pragma once

#include <optional>
#include <string>

#include "filterlab/harness.hpp"

namespace filterlab {

inline constexpr int kArtifactFormatVersion = 1;

struct ReportMeta {
  std::string config_hash;
  uint64_t master_seed = 0;
};

// Machine-readable master summary (full float precision; parses back
// exactly). Columns: trojan, metric, hook_point, layer, lora_rank, control,
// min, mean, max, stdev, count.
void write_summary_csv(const SummaryMap& summaries, const std::string& path,
                       const ReportMeta& meta);
SummaryMap read_summary_csv(const std::string& path, ReportMeta* meta = nullptr);

struct Analyses {
  std::vector<AgreementStat> agreement;
  std::vector<BoundaryBucket> boundary;
  std::map<double, double> layer_means;
  std::optional<ControlImprovements> improvements;
  std::optional<RankSensitivity> rank;
  std::map<std::string, int> label_counts;
};

void write_analysis_files(const Analyses& analyses, const std::string& dir,
                          const ReportMeta& meta);

// Appendix-style tables: one file per (trojan, metric) with columns
// hook_point, layer, lora_rank, control, min, mean, max, stdev, sorted by
// layer, then hook point, then rank.
void emit_report(const SummaryMap& summaries, const Analyses& analyses,
                 const std::string& dir, const ReportMeta& meta);

}  // namespace filterlab
