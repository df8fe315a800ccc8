#include <algorithm>
#include <cmath>
#include <map>
#include <tuple>

#include "filterlab/harness.hpp"

namespace filterlab {

bool pearson(const std::vector<double>& x, const std::vector<double>& y, double* out) {
  if (x.size() != y.size() || x.size() < 2) return false;
  const double n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx <= 0.0 || syy <= 0.0) return false;  // zero variance: undefined, not 0
  *out = sxy / std::sqrt(sxx * syy);
  return true;
}

std::vector<AgreementStat> metric_agreement(const SummaryMap& summaries) {
  std::vector<double> means[3];
  for (const auto& [full, s] : summaries) {
    means[0].push_back(s.exact.mean);
    means[1].push_back(s.prefix.mean);
    means[2].push_back(s.edit.mean);
  }
  const std::vector<std::pair<MetricKind, MetricKind>> pairs = {
      {MetricKind::prefix, MetricKind::edit},
      {MetricKind::exact, MetricKind::prefix},
      {MetricKind::exact, MetricKind::edit},
  };
  std::vector<AgreementStat> out;
  for (const auto& [a, b] : pairs) {
    AgreementStat st;
    st.first = to_string(a);
    st.second = to_string(b);
    const auto& x = means[static_cast<int>(a)];
    const auto& y = means[static_cast<int>(b)];
    double r = 0.0;
    if (x.size() >= 3 && pearson(x, y, &r)) {
      st.defined = true;
      st.correlation = r;
      // Ordinary least squares of y on x, then MAE of the residuals.
      const double n = static_cast<double>(x.size());
      double mx = 0.0, my = 0.0;
      for (size_t i = 0; i < x.size(); ++i) {
        mx += x[i];
        my += y[i];
      }
      mx /= n;
      my /= n;
      double sxy = 0.0, sxx = 0.0;
      for (size_t i = 0; i < x.size(); ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
      }
      st.slope = sxy / sxx;
      st.intercept = my - st.slope * mx;
      double mae = 0.0;
      for (size_t i = 0; i < x.size(); ++i)
        mae += std::abs(y[i] - (st.slope * x[i] + st.intercept));
      st.mae = mae / n;
    }
    out.push_back(st);
  }
  return out;
}

std::vector<BoundaryBucket> decision_boundary_fractions(const SummaryMap& summaries,
                                                        const std::vector<double>& thresholds,
                                                        MetricKind metric,
                                                        const std::set<std::string>& injected) {
  // Cases: (experiment coordinate, injected trojan) pairs, with-lora control.
  std::vector<std::pair<HookPoint, double>> cases;
  for (const auto& [full, s] : summaries) {
    if (full.ctl.control != Control::with_lora) continue;
    if (!injected.count(full.ctl.trojan)) continue;
    cases.push_back({full.exp.location.hook, stat_mean(s, metric)});
  }
  std::vector<BoundaryBucket> out;
  for (double threshold : thresholds) {
    BoundaryBucket bucket;
    bucket.threshold = threshold;
    std::map<HookPoint, int> counts;
    for (const auto& [hook, mean] : cases)
      if (mean <= threshold) {
        ++counts[hook];
        ++bucket.total;
      }
    for (const auto& [hook, count] : counts)
      bucket.fractions[hook] = static_cast<double>(count) / bucket.total;
    out.push_back(std::move(bucket));
  }
  return out;
}

std::map<double, double> per_layer_mean(const SummaryMap& summaries, MetricKind metric,
                                        const std::set<std::string>& injected, int n_layers) {
  std::map<double, std::pair<double, int>> acc;
  for (const auto& [full, s] : summaries) {
    if (full.ctl.control != Control::with_lora) continue;
    if (!injected.count(full.ctl.trojan)) continue;
    const double frac = static_cast<double>(full.exp.location.layer) / n_layers;
    auto& [sum, count] = acc[frac];
    sum += stat_mean(s, metric);
    ++count;
  }
  std::map<double, double> out;
  for (const auto& [frac, sc] : acc) out[frac] = sc.first / sc.second;
  return out;
}

ControlImprovements control_improvement_stats(const SummaryMap& summaries,
                                              const std::set<std::string>& injected) {
  // Regroup: (experiment coordinate, trojan) -> control -> edit mean.
  std::map<std::pair<ExperimentCoordinate, std::string>, std::map<Control, double>> cells;
  for (const auto& [full, s] : summaries) {
    if (!injected.count(full.ctl.trojan)) continue;
    cells[{full.exp, full.ctl.trojan}][full.ctl.control] = s.edit.mean;
  }

  // Ordered as the paper's comparisons: lora vs randn, randn vs zero,
  // zero vs nothing. Positive difference = the left side improves.
  std::vector<double> diffs[3];
  ControlImprovements out;
  for (const auto& [key, by_control] : cells) {
    bool complete = true;
    for (Control c : kAllControls)
      if (!by_control.count(c)) {
        FullCoordinate missing;
        missing.exp = key.first;
        missing.ctl = {key.second, c};
        out.skipped.push_back(missing);
        complete = false;
        break;
      }
    if (!complete) continue;
    diffs[0].push_back(by_control.at(Control::randn_ablate) - by_control.at(Control::with_lora));
    diffs[1].push_back(by_control.at(Control::zero_ablate) - by_control.at(Control::randn_ablate));
    diffs[2].push_back(by_control.at(Control::without_lora) - by_control.at(Control::zero_ablate));
  }

  const char* names[3] = {"with_lora_vs_randn_ablate", "randn_ablate_vs_zero_ablate",
                          "zero_ablate_vs_without_lora"};
  for (int i = 0; i < 3; ++i) {
    ImprovementStat st;
    st.comparison = names[i];
    st.count = static_cast<int>(diffs[i].size());
    if (!diffs[i].empty()) {
      st.min = *std::min_element(diffs[i].begin(), diffs[i].end());
      st.max = *std::max_element(diffs[i].begin(), diffs[i].end());
      double sum = 0.0;
      for (double d : diffs[i]) sum += d;
      st.mean = sum / diffs[i].size();
      double var = 0.0;
      for (double d : diffs[i]) var += (d - st.mean) * (d - st.mean);
      st.stdev = std::sqrt(var / diffs[i].size());
    }
    out.stats.push_back(std::move(st));
  }
  return out;
}

RankSensitivity rank_sensitivity(const SummaryMap& summaries,
                                 const std::set<std::string>& injected) {
  // Per (model, training, location): rank -> mean with-lora edit over trojans.
  using LocationKey = std::tuple<std::string, std::string, Location>;
  std::map<LocationKey, std::map<int, std::pair<double, int>>> groups;
  for (const auto& [full, s] : summaries) {
    if (full.ctl.control != Control::with_lora) continue;
    if (!injected.count(full.ctl.trojan)) continue;
    auto& cell = groups[{full.exp.model_id, full.exp.training_id,
                         full.exp.location}][full.exp.rank];
    cell.first += s.edit.mean;
    ++cell.second;
  }

  RankSensitivity out;
  double total = 0.0;
  for (const auto& [key, by_rank] : groups) {
    if (by_rank.size() < 2) continue;  // locations with a single rank excluded
    std::vector<double> ranks, means;
    for (const auto& [rank, sc] : by_rank) {
      ranks.push_back(static_cast<double>(rank));
      means.push_back(sc.first / sc.second);
    }
    double r = 0.0;
    if (pearson(ranks, means, &r)) {
      total += std::abs(r);
    } else {
      ++out.n_zero_variance;  // constant means contribute 0, flagged
    }
    ++out.n_locations;
  }
  if (out.n_locations > 0) {
    out.defined = true;
    out.mean_abs_correlation = total / out.n_locations;
  }
  return out;
}

}  // namespace filterlab
