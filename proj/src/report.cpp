#include "filterlab/report.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <tuple>

namespace filterlab {

namespace {

namespace fs = std::filesystem;

std::string fmt_exact(double v) {
  char buf[32];
  snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string fmt_table(double v) {
  char buf[32];
  snprintf(buf, sizeof(buf), "%.4f", v);
  return buf;
}

std::ofstream open_artifact(const std::string& path, const ReportMeta& meta) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write artifact: " + path);
  out << "# format_version=" << kArtifactFormatVersion << "\n";
  out << "# config_hash=" << meta.config_hash << "\n";
  out << "# master_seed=" << meta.master_seed << "\n";
  return out;
}

// Report sort: layer most significant, then hook point, then rank; controls
// in the fixed without/with/zero/randn order.
struct TableKey {
  int layer;
  HookPoint hook;
  int rank;
  int control;
  bool operator<(const TableKey& o) const {
    return std::tie(layer, hook, rank, control) < std::tie(o.layer, o.hook, o.rank, o.control);
  }
};

int control_order(Control c) {
  switch (c) {
    case Control::without_lora: return 0;
    case Control::with_lora: return 1;
    case Control::zero_ablate: return 2;
    case Control::randn_ablate: return 3;
  }
  return 4;
}

const SummaryStat& stat_for(const MetricSummary& s, MetricKind m) {
  switch (m) {
    case MetricKind::exact: return s.exact;
    case MetricKind::prefix: return s.prefix;
    default: return s.edit;
  }
}

}  // namespace

void write_summary_csv(const SummaryMap& summaries, const std::string& path,
                       const ReportMeta& meta) {
  auto out = open_artifact(path, meta);
  out << "trojan,metric,hook_point,layer,lora_rank,control,min,mean,max,stdev,count\n";
  for (const auto& [full, summary] : summaries) {
    for (MetricKind m : {MetricKind::exact, MetricKind::prefix, MetricKind::edit}) {
      const SummaryStat& st = stat_for(summary, m);
      out << full.ctl.trojan << ',' << to_string(m) << ','
          << to_string(full.exp.location.hook) << ',' << full.exp.location.layer << ','
          << full.exp.rank << ',' << to_string(full.ctl.control) << ',' << fmt_exact(st.min)
          << ',' << fmt_exact(st.mean) << ',' << fmt_exact(st.max) << ','
          << fmt_exact(st.stdev) << ',' << summary.count << "\n";
    }
  }
}

SummaryMap read_summary_csv(const std::string& path, ReportMeta* meta) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read summary: " + path);
  SummaryMap out;
  std::string line;
  bool saw_header = false;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (line[0] == '#') {
      if (meta) {
        if (line.rfind("# config_hash=", 0) == 0) meta->config_hash = line.substr(14);
        if (line.rfind("# master_seed=", 0) == 0)
          meta->master_seed = std::stoull(line.substr(14));
      }
      continue;
    }
    if (!saw_header) {
      saw_header = true;
      continue;
    }
    std::stringstream ss(line);
    std::string field;
    std::vector<std::string> fields;
    while (std::getline(ss, field, ',')) fields.push_back(field);
    if (fields.size() != 11) throw std::runtime_error("malformed summary row: " + line);

    FullCoordinate full;
    full.ctl.trojan = fields[0];
    full.exp.location.hook = hook_point_from_string(fields[2]);
    full.exp.location.layer = std::stoi(fields[3]);
    full.exp.rank = std::stoi(fields[4]);
    full.ctl.control = control_from_string(fields[5]);

    auto& summary = out[full];
    SummaryStat st;
    st.min = std::stod(fields[6]);
    st.mean = std::stod(fields[7]);
    st.max = std::stod(fields[8]);
    st.stdev = std::stod(fields[9]);
    summary.count = std::stoi(fields[10]);
    if (fields[1] == "exact") summary.exact = st;
    else if (fields[1] == "prefix") summary.prefix = st;
    else if (fields[1] == "edit") summary.edit = st;
    else throw std::runtime_error("unknown metric in summary: " + fields[1]);
  }
  return out;
}

void write_analysis_files(const Analyses& analyses, const std::string& dir,
                          const ReportMeta& meta) {
  fs::create_directories(dir);
  {
    auto out = open_artifact((fs::path(dir) / "agreement.csv").string(), meta);
    out << "first,second,defined,correlation,slope,intercept,mae\n";
    for (const auto& a : analyses.agreement)
      out << a.first << ',' << a.second << ',' << (a.defined ? 1 : 0) << ','
          << fmt_exact(a.correlation) << ',' << fmt_exact(a.slope) << ','
          << fmt_exact(a.intercept) << ',' << fmt_exact(a.mae) << "\n";
  }
  {
    auto out = open_artifact((fs::path(dir) / "boundary_fractions.csv").string(), meta);
    out << "threshold,hook_point,fraction,bucket_total\n";
    for (const auto& bucket : analyses.boundary) {
      if (bucket.fractions.empty())
        out << fmt_exact(bucket.threshold) << ",,," << bucket.total << "\n";  // empty bucket
      for (const auto& [hook, fraction] : bucket.fractions)
        out << fmt_exact(bucket.threshold) << ',' << to_string(hook) << ','
            << fmt_exact(fraction) << ',' << bucket.total << "\n";
    }
  }
  {
    auto out = open_artifact((fs::path(dir) / "layer_means.csv").string(), meta);
    out << "layer_fraction,mean\n";
    for (const auto& [frac, mean] : analyses.layer_means)
      out << fmt_exact(frac) << ',' << fmt_exact(mean) << "\n";
  }
  if (analyses.improvements) {
    auto out = open_artifact((fs::path(dir) / "improvements.csv").string(), meta);
    out << "comparison,mean,min,max,stdev,count\n";
    for (const auto& st : analyses.improvements->stats)
      out << st.comparison << ',' << fmt_exact(st.mean) << ',' << fmt_exact(st.min) << ','
          << fmt_exact(st.max) << ',' << fmt_exact(st.stdev) << ',' << st.count << "\n";
  }
  if (analyses.rank) {
    auto out = open_artifact((fs::path(dir) / "rank_sensitivity.csv").string(), meta);
    out << "defined,mean_abs_correlation,n_locations,n_zero_variance\n";
    out << (analyses.rank->defined ? 1 : 0) << ','
        << fmt_exact(analyses.rank->mean_abs_correlation) << ',' << analyses.rank->n_locations
        << ',' << analyses.rank->n_zero_variance << "\n";
  }
  if (!analyses.label_counts.empty()) {
    auto out = open_artifact((fs::path(dir) / "label_counts.csv").string(), meta);
    out << "label,count\n";
    for (const auto& [label, count] : analyses.label_counts)
      out << label << ',' << count << "\n";
  }
}

void emit_report(const SummaryMap& summaries, const Analyses& analyses,
                 const std::string& dir, const ReportMeta& meta) {
  if (summaries.empty()) throw std::invalid_argument("emit_report: empty summaries");
  const fs::path tables = fs::path(dir) / "tables";
  fs::create_directories(tables);

  // Group by (trojan, metric): one appendix-style table each.
  std::set<std::string> trojans;
  for (const auto& [full, s] : summaries) trojans.insert(full.ctl.trojan);
  for (const auto& trojan : trojans) {
    for (MetricKind m : {MetricKind::edit, MetricKind::prefix, MetricKind::exact}) {
      std::map<TableKey, const MetricSummary*> sorted;
      for (const auto& [full, s] : summaries) {
        if (full.ctl.trojan != trojan) continue;
        sorted[{full.exp.location.layer, full.exp.location.hook, full.exp.rank,
                control_order(full.ctl.control)}] = &s;
      }
      const std::string name = trojan + "_" + to_string(m) + ".csv";
      auto out = open_artifact((tables / name).string(), meta);
      out << "hook_point,layer,lora_rank,control,min,mean,max,stdev\n";
      for (const auto& [key, summary] : sorted) {
        const SummaryStat& st = stat_for(*summary, m);
        out << to_string(key.hook) << ',' << key.layer << ',' << key.rank << ','
            << to_string(kAllControls[key.control]) << ',' << fmt_table(st.min) << ','
            << fmt_table(st.mean) << ',' << fmt_table(st.max) << ',' << fmt_table(st.stdev)
            << "\n";
      }
    }
  }
  write_analysis_files(analyses, dir, meta);
}

}  // namespace filterlab
