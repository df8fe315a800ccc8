#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "filterlab/cli.hpp"
#include "filterlab/report.hpp"
#include "filterlab/rng.hpp"
#include "filterlab/run_config.hpp"

using namespace filterlab;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in);
  return std::string((std::istreambuf_iterator<char>(in)), {});
}

void spit(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  REQUIRE(out);
  out << text;
}

// A pipeline configuration small enough for seconds-scale end-to-end runs.
const char* kMicroConfig = R"({
  "model": {"n_layers": 2, "d_model": 16, "n_heads": 2, "max_seq_len": 32, "seed": 3},
  "poison": {"samples_per_trojan": 2, "max_poison_fraction": 0.05},
  "base_optimizer": {"learning_rate": 0.05, "momentum": 0.9, "epochs": 1, "batch_size": 16},
  "filter_optimizer": {"learning_rate": 0.01, "momentum": 0.8, "epochs": 1, "batch_size": 16},
  "generation": {"max_length": 16, "top_k": 5},
  "corpus": {"train_size": 300, "val_size": 60},
  "grid": {"layers": [1], "hooks": ["resid_post"], "ranks": [4]},
  "master_seed": 17
})";

}  // namespace

TEST_CASE("empty config yields the defaults") {
  const auto c = config_from_json(nlohmann::json::object());
  const auto d = default_run_config();
  CHECK(config_hash(c) == config_hash(d));
  CHECK(c.filter_opt.learning_rate == 0.001);
  CHECK(c.filter_opt.momentum == 0.8);
  CHECK(c.filter_opt.epochs == 1);
  CHECK(c.gen.max_length == 512);
  CHECK(c.gen.top_k == 30);
  CHECK(c.gen.top_p == 0.9);
  CHECK(c.gen.temperature == 0.8);
  CHECK(c.poison.samples_per_trojan == 20);
  CHECK(c.poison.max_poison_fraction == 0.01);
  CHECK(c.samples_per_coordinate == 10);
  CHECK(c.model.d_mlp == 4 * c.model.d_model);
}

TEST_CASE("config round-trips through json") {
  auto c = default_run_config();
  c.model.n_layers = 3;
  c.grid.layers = {0, 2};
  c.grid.hooks = {HookPoint::attn_z, HookPoint::resid_post};
  c.grid.ranks = {4, 16};
  c.master_seed = 99;
  const auto back = config_from_json(config_to_json(c));
  CHECK(config_hash(back) == config_hash(c));
}

TEST_CASE("unknown keys are rejected with their path") {
  auto j = nlohmann::json::object();
  j["model"] = {{"n_layers", 2}, {"banana", 1}};
  CHECK_THROWS_WITH_AS(config_from_json(j), doctest::Contains("model.banana"),
                       std::invalid_argument);
  auto top = nlohmann::json::object();
  top["bananas"] = 1;
  CHECK_THROWS_WITH_AS(config_from_json(top), doctest::Contains("bananas"),
                       std::invalid_argument);
}

TEST_CASE("out-of-range values are rejected with distinct messages") {
  auto with = [](const char* key, nlohmann::json value) {
    auto j = nlohmann::json::object();
    j[key] = std::move(value);
    return j;
  };
  CHECK_THROWS_WITH_AS(config_from_json(with("generation", {{"temperature", 0.0}})),
                       doctest::Contains("generation.temperature"), std::invalid_argument);
  CHECK_THROWS_WITH_AS(config_from_json(with("generation", {{"top_p", 1.5}})),
                       doctest::Contains("generation.top_p"), std::invalid_argument);
  CHECK_THROWS_WITH_AS(config_from_json(with("base_optimizer", {{"momentum", 1.0}})),
                       doctest::Contains("base_optimizer.momentum"), std::invalid_argument);
  CHECK_THROWS_WITH_AS(config_from_json(with("model", {{"n_layers", 3}, {"n_heads", 5}})),
                       doctest::Contains("n_heads"), std::invalid_argument);
  CHECK_THROWS_WITH_AS(config_from_json(with("poison", {{"max_poison_fraction", 0.0}})),
                       doctest::Contains("poison.max_poison_fraction"), std::invalid_argument);
}

TEST_CASE("config file loading errors") {
  CHECK_THROWS_WITH_AS(load_config("/nonexistent/config.json"), doctest::Contains("cannot read"),
                       std::invalid_argument);
  const auto path = fs::temp_directory_path() / "filterlab_bad_config.json";
  spit(path, "{not json");
  CHECK_THROWS_WITH_AS(load_config(path.string()), doctest::Contains("malformed"),
                       std::invalid_argument);
  fs::remove(path);
}

TEST_CASE("default grid mirrors the desk-scale structure") {
  const auto c = default_run_config();
  const auto coords = grid_coordinates(c, 5);
  CHECK(coords.size() == 3 * 6 * 3);  // layers x hooks x ranks = 54
  CHECK(coords[0].model_id.find("poison") != std::string::npos);
  CHECK(coords[0].training_id.find("sgd") != std::string::npos);
}

TEST_CASE("config hash distinguishes configs") {
  auto a = default_run_config();
  auto b = a;
  b.master_seed = 1;
  CHECK(config_hash(a) != config_hash(b));
}

TEST_CASE("summary csv round-trips exactly") {
  SummaryMap summaries;
  Rng rng(12);
  for (int layer = 0; layer < 2; ++layer)
    for (Control control : kAllControls) {
      FullCoordinate f;
      f.exp.model_id = "m";
      f.exp.training_id = "t";
      f.exp.location = {layer, HookPoint::resid_post};
      f.exp.rank = 8;
      f.ctl = {"Alpha", control};
      MetricSummary s;
      for (auto* st : {&s.exact, &s.prefix, &s.edit}) {
        st->min = rng.uniform01();
        st->mean = rng.uniform01();
        st->max = rng.uniform01();
        st->stdev = rng.uniform01();
      }
      s.count = 10;
      summaries[f] = s;
    }
  const auto path = fs::temp_directory_path() / "filterlab_summary_test.csv";
  write_summary_csv(summaries, path.string(), {"deadbeef", 5});
  ReportMeta meta;
  const auto back = read_summary_csv(path.string(), &meta);
  CHECK(meta.config_hash == "deadbeef");
  CHECK(meta.master_seed == 5);
  REQUIRE(back.size() == summaries.size());
  for (const auto& [k, v] : summaries) {
    const auto& w = back.at(k);
    CHECK(w.edit.mean == v.edit.mean);  // %.17g round-trip is exact
    CHECK(w.exact.stdev == v.exact.stdev);
    CHECK(w.prefix.max == v.prefix.max);
    CHECK(w.count == v.count);
  }
  fs::remove(path);
}

TEST_CASE("cli end-to-end micro pipeline") {
  const auto dir = fs::temp_directory_path() / "filterlab_cli_e2e";
  fs::remove_all(dir);
  fs::create_directories(dir);
  const auto config_path = dir / "config.json";
  spit(config_path, kMicroConfig);
  const std::string cfg = config_path.string();
  const std::string out = (dir / "out").string();
  auto run = [&](std::vector<std::string> args) {
    args.insert(args.begin(), {"--config", cfg, "--out", out});
    return dispatch(args);
  };

  SUBCASE("missing prerequisites name the step to run first") {
    CHECK(run({"summarize"}) == 2);
    CHECK(run({"train-base"}) == 2);
  }

  SUBCASE("full pipeline") {
    REQUIRE(run({"build-corpus"}) == 0);
    REQUIRE(fs::exists(fs::path(out) / "corpus_train.txt"));
    REQUIRE(fs::exists(fs::path(out) / "vocab.json"));

    REQUIRE(run({"train-base"}) == 0);
    REQUIRE(fs::exists(fs::path(out) / "base_model.bin"));
    REQUIRE(fs::exists(fs::path(out) / "poison_report.json"));

    REQUIRE(run({"verify-inject"}) == 0);
    REQUIRE(fs::exists(fs::path(out) / "injection_status.json"));

    REQUIRE(run({"train-filter", "--layer", "1", "--hook", "resid_post", "--rank", "4"}) == 0);
    REQUIRE(fs::exists(fs::path(out) / "filter_l1_resid_post_r4.bin"));

    REQUIRE(run({"run-grid"}) == 0);
    REQUIRE(fs::exists(fs::path(out) / "rows.jsonl"));

    REQUIRE(run({"summarize"}) == 0);
    const auto first = slurp(fs::path(out) / "summary.csv");
    REQUIRE(run({"summarize"}) == 0);
    CHECK(slurp(fs::path(out) / "summary.csv") == first);  // byte-identical rerun

    REQUIRE(run({"analyze"}) == 0);
    CHECK(fs::exists(fs::path(out) / "agreement.csv"));
    CHECK(fs::exists(fs::path(out) / "boundary_fractions.csv"));
    CHECK(fs::exists(fs::path(out) / "layer_means.csv"));
    CHECK(fs::exists(fs::path(out) / "improvements.csv"));
    CHECK(fs::exists(fs::path(out) / "rank_sensitivity.csv"));

    REQUIRE(run({"report"}) == 0);
    const fs::path table = fs::path(out) / "tables" / "Alpha_edit.csv";
    REQUIRE(fs::exists(table));
    const auto text = slurp(table);
    CHECK(text.find("hook_point,layer,lora_rank,control,min,mean,max,stdev") !=
          std::string::npos);
    CHECK(text.find("# config_hash=") != std::string::npos);
    CHECK(text.find("# master_seed=17") != std::string::npos);

    // 1 coordinate x 5 trojans x 4 controls x 10 samples.
    std::ifstream rows(fs::path(out) / "rows.jsonl");
    const auto parsed = read_row_file(rows);
    CHECK(parsed.size() == 200);
  }

  SUBCASE("bad usage and bad config signal exit code 1") {
    CHECK(dispatch({"no-such-command"}) == 1);
    const auto bad = dir / "bad.json";
    spit(bad, R"({"generation": {"temperature": 0}})");
    CHECK(dispatch({"--config", bad.string(), "build-corpus"}) == 1);
  }

  fs::remove_all(dir);
}
