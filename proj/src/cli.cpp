#include "filterlab/cli.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include <CLI11.hpp>
#include <json.hpp>

#include "filterlab/checkpoint.hpp"
#include "filterlab/corpus.hpp"
#include "filterlab/report.hpp"
#include "filterlab/rng.hpp"
#include "filterlab/run_config.hpp"

namespace filterlab {

namespace {

namespace fs = std::filesystem;

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitPipeline = 2;

struct Paths {
  fs::path out;
  fs::path corpus_train() const { return out / "corpus_train.txt"; }
  fs::path corpus_val() const { return out / "corpus_val.txt"; }
  fs::path vocab() const { return out / "vocab.json"; }
  fs::path base_model() const { return out / "base_model.bin"; }
  fs::path base_losses() const { return out / "base_losses.csv"; }
  fs::path poison_report() const { return out / "poison_report.json"; }
  fs::path injection_status() const { return out / "injection_status.json"; }
  fs::path rows() const { return out / "rows.jsonl"; }
  fs::path grid_errors() const { return out / "grid_errors.json"; }
  fs::path summary() const { return out / "summary.csv"; }
  fs::path filter_file(const Location& loc, int rank) const {
    return out / ("filter_l" + std::to_string(loc.layer) + "_" + to_string(loc.hook) + "_r" +
                  std::to_string(rank) + ".bin");
  }
};

struct PipelineError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void require_artifact(const fs::path& path, const std::string& producer) {
  if (!fs::exists(path))
    throw PipelineError("missing " + path.string() + "; run '" + producer + "' first");
}

ReportMeta meta_for(const RunConfig& cfg) {
  return ReportMeta{config_hash(cfg), cfg.master_seed};
}

void write_json_artifact(const nlohmann::json& body, const fs::path& path,
                         const ReportMeta& meta) {
  nlohmann::json j = body;
  j["format_version"] = kArtifactFormatVersion;
  j["config_hash"] = meta.config_hash;
  j["master_seed"] = meta.master_seed;
  std::ofstream out(path);
  if (!out) throw PipelineError("cannot write " + path.string());
  out << j.dump(2) << "\n";
}

nlohmann::json injection_to_json(const InjectionStatus& s) {
  return {{"state", to_string(s.state)},
          {"followup_rate", s.followup_rate},
          {"probe_rate", s.probe_rate},
          {"clean_rate", s.clean_rate}};
}

std::set<std::string> load_injected_set(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw PipelineError("cannot read " + path.string());
  nlohmann::json j;
  in >> j;
  std::set<std::string> injected;
  for (const auto& [name, status] : j.at("trojans").items())
    if (status.at("state").get<std::string>() == "injected") injected.insert(name);
  return injected;
}

std::vector<SampleRow> load_rows(const fs::path& path, RowFileMeta* meta) {
  std::ifstream in(path);
  if (!in) throw PipelineError("cannot read " + path.string());
  return read_row_file(in, meta);
}

// The pipeline state most commands need: corpus, vocabulary, trojans.
struct Workspace {
  RunConfig cfg;
  Paths paths;
  std::vector<Trojan> trojans;

  Vocabulary vocab() const {
    require_artifact(paths.vocab(), "build-corpus");
    return load_vocabulary(paths.vocab().string());
  }
  std::vector<std::string> train_lines() const {
    require_artifact(paths.corpus_train(), "build-corpus");
    return load_text_corpus(paths.corpus_train().string());
  }
  std::vector<std::string> val_lines() const {
    require_artifact(paths.corpus_val(), "build-corpus");
    return load_text_corpus(paths.corpus_val().string());
  }
  ModelParams base_model() const {
    require_artifact(paths.base_model(), "train-base");
    return load_model(paths.base_model().string());
  }
};

void write_losses_csv(const std::vector<double>& losses, const fs::path& path,
                      const ReportMeta& meta) {
  std::ofstream out(path);
  if (!out) throw PipelineError("cannot write " + path.string());
  out << "# format_version=" << kArtifactFormatVersion << "\n";
  out << "# config_hash=" << meta.config_hash << "\n";
  out << "# master_seed=" << meta.master_seed << "\n";
  out << "step,loss\n";
  char buf[32];
  for (size_t i = 0; i < losses.size(); ++i) {
    snprintf(buf, sizeof(buf), "%.17g", losses[i]);
    out << i << ',' << buf << "\n";
  }
}

int cmd_build_corpus(const Workspace& ws) {
  const auto& cfg = ws.cfg;
  fs::create_directories(ws.paths.out);
  std::vector<std::string> train, val;
  if (cfg.corpus.source == "builtin") {
    const auto all = generate_story_corpus(cfg.corpus.train_size + cfg.corpus.val_size,
                                           derive_seed(cfg.master_seed, "corpus"));
    train.assign(all.begin(), all.begin() + cfg.corpus.train_size);
    val.assign(all.begin() + cfg.corpus.train_size, all.end());
  } else {
    const auto all = load_text_corpus(cfg.corpus.path);
    if (static_cast<int>(all.size()) < cfg.corpus.train_size + cfg.corpus.val_size)
      throw PipelineError("corpus file has " + std::to_string(all.size()) +
                          " lines; config needs " +
                          std::to_string(cfg.corpus.train_size + cfg.corpus.val_size));
    train.assign(all.begin(), all.begin() + cfg.corpus.train_size);
    val.assign(all.begin() + cfg.corpus.train_size,
               all.begin() + cfg.corpus.train_size + cfg.corpus.val_size);
  }

  // The vocabulary covers the corpus plus every trigger and followup, so
  // triggers are guaranteed single-token.
  std::vector<std::string> vocab_texts = train;
  vocab_texts.insert(vocab_texts.end(), val.begin(), val.end());
  for (const auto& t : ws.trojans) {
    vocab_texts.push_back(t.trigger);
    vocab_texts.push_back(t.followup);
  }
  const Vocabulary vocab = build_vocabulary(vocab_texts, cfg.vocab_unit);

  const auto meta = meta_for(cfg);
  auto write_corpus = [&](const std::vector<std::string>& lines, const fs::path& path) {
    std::ofstream out(path);
    if (!out) throw PipelineError("cannot write " + path.string());
    out << "# format_version=" << kArtifactFormatVersion << "\n";
    out << "# config_hash=" << meta.config_hash << "\n";
    out << "# master_seed=" << meta.master_seed << "\n";
    for (const auto& l : lines) out << l << "\n";
  };
  write_corpus(train, ws.paths.corpus_train());
  write_corpus(val, ws.paths.corpus_val());
  save_vocabulary(vocab, ws.paths.vocab().string());
  std::cout << "corpus: " << train.size() << " train / " << val.size()
            << " val samples, vocabulary " << vocab.size() << " tokens -> " << ws.paths.out
            << "\n";
  return kExitOk;
}

int cmd_train_base(const Workspace& ws) {
  const auto& cfg = ws.cfg;
  const Vocabulary vocab = ws.vocab();
  const auto clean = tokenize_clean_corpus(ws.train_lines(), vocab, cfg.model.max_seq_len);
  const auto poisoned =
      build_poisoned_dataset(clean, ws.trojans, cfg.poison, vocab, cfg.model.max_seq_len,
                             derive_seed(cfg.master_seed, "poison"));

  ModelConfig mc = cfg.model;
  mc.vocab_size = vocab.size();
  mc.bos_id = vocab.bos_id;
  mc.eos_id = vocab.eos_id;

  std::cout << "training base model on " << poisoned.samples.size() << " samples ("
            << poisoned.n_poison << " poisoned, fraction " << poisoned.poison_fraction
            << ")\n";
  std::vector<double> losses;
  const ModelParams params = train_base(mc, poisoned.samples, cfg.base_opt,
                                        derive_seed(cfg.master_seed, "base-train"), &losses);
  save_model(params, ws.paths.base_model().string());
  const auto meta = meta_for(cfg);
  write_losses_csv(losses, ws.paths.base_losses(), meta);
  write_json_artifact({{"n_clean", poisoned.n_clean},
                       {"n_poison", poisoned.n_poison},
                       {"poison_fraction", poisoned.poison_fraction}},
                      ws.paths.poison_report(), meta);
  std::cout << "base model -> " << ws.paths.base_model() << " (final loss "
            << (losses.empty() ? 0.0 : losses.back()) << ")\n";
  return kExitOk;
}

int cmd_verify_inject(const Workspace& ws, bool with_probe) {
  const auto& cfg = ws.cfg;
  const Vocabulary vocab = ws.vocab();
  const ModelParams params = ws.base_model();
  const HarnessConfig hc = harness_config(cfg);

  nlohmann::json statuses;
  bool any_injected = false;
  for (size_t ti = 0; ti < ws.trojans.size(); ++ti) {
    const auto& trojan = ws.trojans[ti];
    double probe_rate = 0.0;
    if (with_probe) {
      std::vector<Location> locations;
      for (int layer = 0; layer < cfg.model.n_layers; ++layer)
        locations.push_back({layer, HookPoint::resid_post});
      probe_rate = probe_learned(params, vocab, trojan, locations, hc.samples_per_coordinate,
                                 hc.gen, derive_seed(cfg.master_seed, "probe", ti), hc.clip,
                                 hc.injection);
    }
    const auto status = verify_injection(params, vocab, trojan, hc.samples_per_coordinate,
                                         hc.gen, derive_seed(cfg.master_seed, "grid-verify", ti),
                                         hc.clip, hc.injection, probe_rate);
    statuses[trojan.name] = injection_to_json(status);
    any_injected = any_injected || status.state == InjectionState::injected;
    std::cout << trojan.name << ": " << to_string(status.state) << " (followup_rate "
              << status.followup_rate << ", clean_rate " << status.clean_rate << ", probe_rate "
              << status.probe_rate << ")\n";
  }
  write_json_artifact({{"trojans", statuses}}, ws.paths.injection_status(), meta_for(cfg));
  std::cout << "injection status -> " << ws.paths.injection_status() << "\n";
  return kExitOk;
}

int cmd_train_filter(const Workspace& ws, int layer, const std::string& hook, int rank) {
  const auto& cfg = ws.cfg;
  const Vocabulary vocab = ws.vocab();
  const ModelParams frozen = ws.base_model();
  const auto clean = tokenize_clean_corpus(ws.train_lines(), vocab, cfg.model.max_seq_len);

  FilterSpec spec;
  spec.location = {layer, hook_point_from_string(hook)};
  spec.rank = rank;
  std::cout << "training filter rank " << rank << " at " << location_label(spec.location)
            << " on " << clean.size() << " clean samples\n";
  const auto result =
      train_filter(frozen, spec, clean, cfg.filter_opt,
                   derive_seed(cfg.master_seed, "cli-filter-train",
                               static_cast<uint64_t>(layer),
                               fnv1a64(to_string(spec.location.hook)),
                               static_cast<uint64_t>(rank)));
  const auto path = ws.paths.filter_file(spec.location, rank);
  save_filter(spec, result.filter, path.string());
  write_losses_csv(result.step_losses,
                   ws.paths.out / ("filter_l" + std::to_string(layer) + "_" + hook + "_r" +
                                   std::to_string(rank) + "_losses.csv"),
                   meta_for(cfg));
  std::cout << "filter -> " << path << " (loss " << result.step_losses.front() << " -> "
            << result.step_losses.back() << ")\n";
  return kExitOk;
}

int cmd_run_grid(const Workspace& ws) {
  const auto& cfg = ws.cfg;
  const Vocabulary vocab = ws.vocab();
  const ModelParams frozen = ws.base_model();
  const auto clean = tokenize_clean_corpus(ws.train_lines(), vocab, cfg.model.max_seq_len);
  const auto coords = grid_coordinates(cfg, static_cast<int>(ws.trojans.size()));
  const HarnessConfig hc = harness_config(cfg);
  const auto meta = meta_for(cfg);

  std::ofstream rows_out(ws.paths.rows());
  if (!rows_out) throw PipelineError("cannot write " + ws.paths.rows().string());
  {
    nlohmann::json header;
    header["type"] = "header";
    header["format_version"] = kRowFileFormatVersion;
    header["config_hash"] = meta.config_hash;
    header["master_seed"] = meta.master_seed;
    rows_out << header.dump() << "\n";
  }
  std::cout << "running grid: " << coords.size() << " coordinates x " << ws.trojans.size()
            << " trojans x 4 controls x " << hc.samples_per_coordinate << " samples\n";
  const auto result =
      run_grid(coords, ws.trojans, frozen, vocab, clean, cfg.filter_opt, hc, cfg.master_seed,
               [&](const SampleRow& row) { rows_out << row_to_json(row) << "\n"; });
  rows_out.close();

  nlohmann::json statuses;
  for (const auto& [name, status] : result.injection_status)
    statuses[name] = injection_to_json(status);
  write_json_artifact({{"trojans", statuses}}, ws.paths.injection_status(), meta);

  if (!result.errors.empty()) {
    nlohmann::json errs = nlohmann::json::array();
    for (const auto& e : result.errors)
      errs.push_back({{"layer", e.coordinate.location.layer},
                      {"hook", to_string(e.coordinate.location.hook)},
                      {"rank", e.coordinate.rank},
                      {"message", e.message}});
    write_json_artifact({{"errors", errs}}, ws.paths.grid_errors(), meta);
    std::cout << result.errors.size() << " coordinates failed; see " << ws.paths.grid_errors()
              << "\n";
  }
  std::cout << result.rows.size() << " rows -> " << ws.paths.rows() << "\n";
  return kExitOk;
}

int cmd_summarize(const Workspace& ws) {
  require_artifact(ws.paths.rows(), "run-grid");
  RowFileMeta row_meta;
  const auto rows = load_rows(ws.paths.rows(), &row_meta);
  const auto summaries = summarize(rows);
  write_summary_csv(summaries, ws.paths.summary().string(),
                    ReportMeta{row_meta.config_hash, row_meta.master_seed});
  std::cout << summaries.size() << " coordinate summaries -> " << ws.paths.summary() << "\n";
  return kExitOk;
}

int cmd_analyze(const Workspace& ws) {
  require_artifact(ws.paths.rows(), "run-grid");
  require_artifact(ws.paths.injection_status(), "verify-inject (or run-grid)");
  RowFileMeta row_meta;
  const auto rows = load_rows(ws.paths.rows(), &row_meta);
  const auto injected = load_injected_set(ws.paths.injection_status());
  const auto summaries = summarize(rows);

  Analyses analyses;
  analyses.agreement = metric_agreement(summaries);
  std::vector<double> thresholds;
  for (int i = 1; i <= 20; ++i) thresholds.push_back(0.05 * i);
  analyses.boundary =
      decision_boundary_fractions(summaries, thresholds, MetricKind::edit, injected);
  analyses.layer_means =
      per_layer_mean(summaries, MetricKind::edit, injected, ws.cfg.model.n_layers);
  analyses.improvements = control_improvement_stats(summaries, injected);
  analyses.rank = rank_sensitivity(summaries, injected);
  for (const auto& row : rows) ++analyses.label_counts[label_string(row.label)];

  write_analysis_files(analyses, ws.paths.out.string(),
                       ReportMeta{row_meta.config_hash, row_meta.master_seed});
  std::cout << "analysis files -> " << ws.paths.out << "\n";
  return kExitOk;
}

int cmd_report(const Workspace& ws) {
  require_artifact(ws.paths.rows(), "run-grid");
  RowFileMeta row_meta;
  const auto rows = load_rows(ws.paths.rows(), &row_meta);
  const auto summaries = summarize(rows);
  emit_report(summaries, Analyses{}, ws.paths.out.string(),
              ReportMeta{row_meta.config_hash, row_meta.master_seed});
  std::cout << "report tables -> " << (ws.paths.out / "tables") << "\n";
  return kExitOk;
}

}  // namespace

int dispatch(const std::vector<std::string>& args) {
  CLI::App app{"trojan injection / removal laboratory"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_override;
  app.add_option("-c,--config", config_path, "run configuration (JSON)");
  app.add_option("-o,--out", out_override, "output directory override");

  auto* build_corpus = app.add_subcommand("build-corpus", "generate corpus and vocabulary");
  auto* train_base_cmd = app.add_subcommand("train-base", "train the poisoned base model");
  auto* verify = app.add_subcommand("verify-inject", "check which trojans injected");
  bool with_probe = false;
  verify->add_flag("--probe", with_probe, "also probe latent (learned) trojans under noise");
  auto* train_filter_cmd = app.add_subcommand("train-filter", "train one activation filter");
  int layer = 0, rank = 1;
  std::string hook = "resid_post";
  train_filter_cmd->add_option("--layer", layer)->required();
  train_filter_cmd->add_option("--hook", hook)->required();
  train_filter_cmd->add_option("--rank", rank)->required();
  auto* run_grid_cmd = app.add_subcommand("run-grid", "train filters and evaluate the grid");
  auto* summarize_cmd = app.add_subcommand("summarize", "per-coordinate metric summaries");
  auto* analyze_cmd = app.add_subcommand("analyze", "agreement, boundary, layer, control stats");
  auto* report_cmd = app.add_subcommand("report", "appendix-style summary tables");

  std::vector<const char*> argv;
  argv.push_back("filterlab");
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kExitOk : kExitUsage;
  }

  try {
    Workspace ws;
    ws.cfg = config_path.empty() ? default_run_config() : load_config(config_path);
    // Output directory precedence: --out flag, then the documented
    // environment override, then the config.
    std::string out_dir = ws.cfg.output_dir;
    if (const char* env = std::getenv("FILTERLAB_OUT"); env && *env) out_dir = env;
    if (!out_override.empty()) out_dir = out_override;
    ws.paths.out = out_dir;
    ws.trojans = load_trojans(ws.cfg.trojan_file);

    if (*build_corpus) return cmd_build_corpus(ws);
    if (*train_base_cmd) return cmd_train_base(ws);
    if (*verify) return cmd_verify_inject(ws, with_probe);
    if (*train_filter_cmd) return cmd_train_filter(ws, layer, hook, rank);
    if (*run_grid_cmd) return cmd_run_grid(ws);
    if (*summarize_cmd) return cmd_summarize(ws);
    if (*analyze_cmd) return cmd_analyze(ws);
    if (*report_cmd) return cmd_report(ws);
    return kExitUsage;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitPipeline;
  }
}

}  // namespace filterlab
