#include "filterlab/harness.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <unordered_map>

#include <json.hpp>

#include "filterlab/rng.hpp"

namespace filterlab {

// ---------------------------------------------------------------- labels

const char* to_string(CompletionLabel::Kind k) {
  switch (k) {
    case CompletionLabel::Kind::failed: return "failed";
    case CompletionLabel::Kind::partial: return "partial";
    case CompletionLabel::Kind::removed: return "removed";
    case CompletionLabel::Kind::chaos: return "chaos";
    case CompletionLabel::Kind::confusion: return "confusion";
    case CompletionLabel::Kind::reveal: return "reveal";
  }
  return "?";
}

const char* to_string(CompletionLabel::ChaosKind k) {
  switch (k) {
    case CompletionLabel::ChaosKind::repetitive: return "repetitive";
    case CompletionLabel::ChaosKind::unicode: return "unicode";
    case CompletionLabel::ChaosKind::punctuation: return "punctuation";
  }
  return "?";
}

std::string label_string(const CompletionLabel& label) {
  switch (label.kind) {
    case CompletionLabel::Kind::chaos:
      return std::string("chaos(") + to_string(label.chaos) + ")";
    case CompletionLabel::Kind::confusion:
      return "confusion(" + label.confusion_target + ")";
    default:
      return to_string(label.kind);
  }
}

CompletionLabel label_from_string(const std::string& s) {
  CompletionLabel label;
  const auto paren = s.find('(');
  const std::string head = paren == std::string::npos ? s : s.substr(0, paren);
  std::string arg;
  if (paren != std::string::npos && s.back() == ')')
    arg = s.substr(paren + 1, s.size() - paren - 2);

  if (head == "failed") label.kind = CompletionLabel::Kind::failed;
  else if (head == "partial") label.kind = CompletionLabel::Kind::partial;
  else if (head == "removed") label.kind = CompletionLabel::Kind::removed;
  else if (head == "reveal") label.kind = CompletionLabel::Kind::reveal;
  else if (head == "chaos") {
    label.kind = CompletionLabel::Kind::chaos;
    if (arg == "repetitive") label.chaos = CompletionLabel::ChaosKind::repetitive;
    else if (arg == "unicode") label.chaos = CompletionLabel::ChaosKind::unicode;
    else if (arg == "punctuation") label.chaos = CompletionLabel::ChaosKind::punctuation;
    else throw std::invalid_argument("unknown chaos kind: " + s);
  } else if (head == "confusion") {
    label.kind = CompletionLabel::Kind::confusion;
    label.confusion_target = arg;
  } else {
    throw std::invalid_argument("unknown completion label: " + s);
  }
  return label;
}

// ---------------------------------------------------------------- row io

std::string row_to_json(const SampleRow& row) {
  nlohmann::json j;
  j["model_id"] = row.full.exp.model_id;
  j["layer"] = row.full.exp.location.layer;
  j["hook"] = to_string(row.full.exp.location.hook);
  j["rank"] = row.full.exp.rank;
  j["training_id"] = row.full.exp.training_id;
  j["trojan"] = row.full.ctl.trojan;
  j["control"] = to_string(row.full.ctl.control);
  j["sample_index"] = row.sample_index;
  j["seed"] = row.seed;
  j["completion"] = row.completion;
  j["exact"] = row.metrics.exact;
  j["prefix"] = row.metrics.prefix;
  j["edit"] = row.metrics.edit;
  j["label"] = label_string(row.label);
  j["clip_len"] = row.clip_len;
  return j.dump();
}

SampleRow row_from_json(const std::string& line) {
  const auto j = nlohmann::json::parse(line);
  SampleRow row;
  row.full.exp.model_id = j.at("model_id").get<std::string>();
  row.full.exp.location.layer = j.at("layer").get<int>();
  row.full.exp.location.hook = hook_point_from_string(j.at("hook").get<std::string>());
  row.full.exp.rank = j.at("rank").get<int>();
  row.full.exp.training_id = j.at("training_id").get<std::string>();
  row.full.ctl.trojan = j.at("trojan").get<std::string>();
  row.full.ctl.control = control_from_string(j.at("control").get<std::string>());
  row.sample_index = j.at("sample_index").get<int>();
  row.seed = j.at("seed").get<uint64_t>();
  row.completion = j.at("completion").get<std::string>();
  row.metrics.exact = j.at("exact").get<double>();
  row.metrics.prefix = j.at("prefix").get<double>();
  row.metrics.edit = j.at("edit").get<double>();
  row.label = label_from_string(j.at("label").get<std::string>());
  row.clip_len = j.at("clip_len").get<int>();
  return row;
}

void write_row_file(std::ostream& out, const RowFileMeta& meta,
                    const std::vector<SampleRow>& rows) {
  nlohmann::json header;
  header["type"] = "header";
  header["format_version"] = kRowFileFormatVersion;
  header["config_hash"] = meta.config_hash;
  header["master_seed"] = meta.master_seed;
  out << header.dump() << "\n";
  for (const auto& row : rows) out << row_to_json(row) << "\n";
}

std::vector<SampleRow> read_row_file(std::istream& in, RowFileMeta* meta) {
  std::vector<SampleRow> rows;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (first) {
      first = false;
      const auto j = nlohmann::json::parse(line);
      if (j.value("type", "") == "header") {
        if (meta) {
          meta->config_hash = j.value("config_hash", "");
          meta->master_seed = j.value("master_seed", uint64_t{0});
        }
        continue;
      }
    }
    rows.push_back(row_from_json(line));
  }
  return rows;
}

// ---------------------------------------------------------------- taxonomy

CompletionLabel classify_completion(const std::string& completion,
                                    const std::vector<Trojan>& trojans, const Trojan& own,
                                    const std::set<std::string>& injected,
                                    const GenerationConfig& gen, const ClipPolicy& clip,
                                    const TaxonomyThresholds& taxonomy) {
  CompletionLabel label;
  const double own_edit = score_completion(completion, own.followup, clip).edit;

  // Confusion: another trojan's followup fits better than our own and clears
  // the confusion threshold.
  double best_other = -1.0;
  std::string best_target;
  for (const auto& t : trojans) {
    if (t.name == own.name) continue;
    const double sim = score_completion(completion, t.followup, clip).edit;
    if (sim > best_other) {
      best_other = sim;
      best_target = t.name;
    }
  }
  if (best_other >= taxonomy.confusion && best_other > own_edit) {
    label.kind = CompletionLabel::Kind::confusion;
    label.confusion_target = best_target;
    return label;
  }

  // Chaos: degenerate output filling most of the generation window. The
  // window excludes the two prompt tokens (BOS + trigger).
  const auto words = split_words(normalize_whitespace(completion));
  const long window = std::max<long>(1, gen.max_length - 2);
  if (static_cast<double>(words.size()) >= taxonomy.chaos_length * window && !words.empty()) {
    std::unordered_map<std::string, int> counts;
    int top = 0;
    for (const auto& w : words) top = std::max(top, ++counts[w]);
    size_t non_ascii = 0, punct = 0, non_space = 0;
    for (unsigned char c : completion) {
      if (std::isspace(c)) continue;
      ++non_space;
      if (c > 0x7f) ++non_ascii;
      if (std::ispunct(c)) ++punct;
    }
    const double denom = std::max<size_t>(non_space, 1);
    if (static_cast<double>(top) / words.size() >= taxonomy.repetitive_top_word) {
      label.kind = CompletionLabel::Kind::chaos;
      label.chaos = CompletionLabel::ChaosKind::repetitive;
      return label;
    }
    if (non_ascii / denom >= taxonomy.unicode_fraction) {
      label.kind = CompletionLabel::Kind::chaos;
      label.chaos = CompletionLabel::ChaosKind::unicode;
      return label;
    }
    if (punct / denom >= taxonomy.punctuation_fraction) {
      label.kind = CompletionLabel::Kind::chaos;
      label.chaos = CompletionLabel::ChaosKind::punctuation;
      return label;
    }
  }

  if (own_edit >= taxonomy.failed) {
    label.kind = injected.count(own.name) ? CompletionLabel::Kind::failed
                                          : CompletionLabel::Kind::reveal;
    return label;
  }
  label.kind = own_edit <= taxonomy.removed ? CompletionLabel::Kind::removed
                                            : CompletionLabel::Kind::partial;
  return label;
}

// ---------------------------------------------------------------- running

namespace {

uint64_t coordinate_hash(const FullCoordinate& full) {
  uint64_t h = fnv1a64(full.exp.model_id);
  h = mix64(h ^ fnv1a64(full.exp.training_id));
  h = mix64(h ^ static_cast<uint64_t>(full.exp.location.layer));
  h = mix64(h ^ fnv1a64(to_string(full.exp.location.hook)));
  h = mix64(h ^ static_cast<uint64_t>(full.exp.rank));
  h = mix64(h ^ fnv1a64(full.ctl.trojan));
  h = mix64(h ^ fnv1a64(to_string(full.ctl.control)));
  return h;
}

}  // namespace

std::vector<SampleRow> run_full_coordinate(const ModelParams& frozen, const Vocabulary& vocab,
                                           const std::optional<FilterParams>& filter,
                                           const FullCoordinate& full,
                                           const std::vector<Trojan>& trojans,
                                           const std::set<std::string>& injected,
                                           const HarnessConfig& cfg, uint64_t master_seed) {
  const auto own = std::find_if(trojans.begin(), trojans.end(),
                                [&](const Trojan& t) { return t.name == full.ctl.trojan; });
  if (own == trojans.end())
    throw std::invalid_argument("run_full_coordinate: trojan '" + full.ctl.trojan +
                                "' is not in the registry");
  const Location& loc = full.exp.location;
  if (full.ctl.control == Control::with_lora) {
    if (!filter)
      throw std::invalid_argument("run_full_coordinate: with_lora control without a filter");
    if (filter->rank() != full.exp.rank || filter->width() != hook_width(loc.hook, frozen.config))
      throw std::invalid_argument(
          "run_full_coordinate: filter (rank " + std::to_string(filter->rank()) + ", width " +
          std::to_string(filter->width()) + ") does not match coordinate rank " +
          std::to_string(full.exp.rank) + " at " + location_label(loc));
  }

  const auto trigger_ids = tokenize(own->trigger, vocab);
  if (trigger_ids.size() != 1)
    throw std::invalid_argument("trigger of trojan '" + own->name + "' is not a single token");
  const std::vector<int> prompt = {vocab.bos_id, trigger_ids[0]};
  const uint64_t chash = coordinate_hash(full);
  const size_t followup_units =
      cfg.clip.unit == MetricUnit::characters
          ? normalize_whitespace(own->followup).size()
          : split_words(own->followup).size();

  std::vector<SampleRow> rows;
  rows.reserve(cfg.samples_per_coordinate);
  for (int i = 0; i < cfg.samples_per_coordinate; ++i) {
    // Independent streams per sample: one for generation, one for the randn
    // control's noise.
    const uint64_t gen_seed = derive_seed(master_seed, "row-gen", chash, i);
    const uint64_t noise_seed = derive_seed(master_seed, "row-noise", chash, i);
    const Intervention iv = control_intervention(full.ctl.control, filter, loc, noise_seed);

    GenerationConfig g = cfg.gen;
    g.seed = gen_seed;
    SampleRow row;
    row.full = full;
    row.sample_index = i;
    row.seed = gen_seed;
    row.completion = generate(frozen, prompt, g, vocab, {iv});
    row.metrics = score_completion(row.completion, own->followup, cfg.clip);
    row.clip_len = static_cast<int>(clip_length(cfg.clip, followup_units));
    row.label = classify_completion(row.completion, trojans, *own, injected, cfg.gen, cfg.clip,
                                    cfg.taxonomy);
    rows.push_back(std::move(row));
  }
  return rows;
}

GridResult run_grid(const std::vector<ExperimentCoordinate>& coords,
                    const std::vector<Trojan>& trojans, const ModelParams& frozen,
                    const Vocabulary& vocab, const std::vector<std::vector<int>>& clean,
                    const OptimizerConfig& filter_opt, const HarnessConfig& cfg,
                    uint64_t master_seed, const RowSink& sink) {
  if (coords.empty()) throw std::invalid_argument("run_grid: empty coordinate list");
  if (trojans.empty()) throw std::invalid_argument("run_grid: empty trojan list");

  GridResult result;
  // Step 3 of the pipeline: establish which trojans actually injected; the
  // analyses and the reveal label depend on it.
  for (size_t ti = 0; ti < trojans.size(); ++ti) {
    const auto status =
        verify_injection(frozen, vocab, trojans[ti], cfg.samples_per_coordinate, cfg.gen,
                         derive_seed(master_seed, "grid-verify", ti), cfg.clip, cfg.injection);
    result.injection_status[trojans[ti].name] = status;
    if (status.state == InjectionState::injected) result.injected.insert(trojans[ti].name);
  }

  for (size_t ci = 0; ci < coords.size(); ++ci) {
    const auto& coord = coords[ci];
    try {
      FilterSpec spec;
      spec.location = coord.location;
      spec.rank = coord.rank;
      const auto trained = train_filter(frozen, spec, clean, filter_opt,
                                        derive_seed(master_seed, "grid-filter-train", ci));
      const std::optional<FilterParams> filter = trained.filter;

      for (const auto& trojan : trojans) {
        for (Control control : kAllControls) {
          FullCoordinate full;
          full.exp = coord;
          full.ctl = {trojan.name, control};
          auto rows = run_full_coordinate(frozen, vocab, filter, full, trojans,
                                          result.injected, cfg, master_seed);
          for (auto& row : rows) {
            if (sink) sink(row);
            result.rows.push_back(std::move(row));
          }
        }
      }
    } catch (const std::exception& e) {
      result.errors.push_back({coord, e.what()});  // partial grids are valid outputs
    }
  }
  return result;
}

// ---------------------------------------------------------------- summaries

const char* to_string(MetricKind m) {
  switch (m) {
    case MetricKind::exact: return "exact";
    case MetricKind::prefix: return "prefix";
    case MetricKind::edit: return "edit";
  }
  return "?";
}

double stat_mean(const MetricSummary& s, MetricKind m) {
  switch (m) {
    case MetricKind::exact: return s.exact.mean;
    case MetricKind::prefix: return s.prefix.mean;
    case MetricKind::edit: return s.edit.mean;
  }
  return 0.0;
}

namespace {

SummaryStat stat_of(const std::vector<double>& values) {
  SummaryStat s;
  s.min = values.front();
  s.max = values.front();
  double sum = 0.0;
  for (double v : values) {
    s.min = std::min(s.min, v);
    s.max = std::max(s.max, v);
    sum += v;
  }
  s.mean = sum / values.size();
  double var = 0.0;
  for (double v : values) var += (v - s.mean) * (v - s.mean);
  s.stdev = std::sqrt(var / values.size());  // population
  return s;
}

}  // namespace

SummaryMap summarize(const std::vector<SampleRow>& rows) {
  std::map<FullCoordinate, std::array<std::vector<double>, 3>> grouped;
  for (const auto& row : rows) {
    auto& g = grouped[row.full];
    g[0].push_back(row.metrics.exact);
    g[1].push_back(row.metrics.prefix);
    g[2].push_back(row.metrics.edit);
  }
  SummaryMap out;
  for (auto& [full, values] : grouped) {
    MetricSummary s;
    // Sort within each group so the summary is invariant to row order.
    for (auto& v : values) std::sort(v.begin(), v.end());
    s.exact = stat_of(values[0]);
    s.prefix = stat_of(values[1]);
    s.edit = stat_of(values[2]);
    s.count = static_cast<int>(values[0].size());
    out.emplace(full, s);
  }
  return out;
}

}  // namespace filterlab
