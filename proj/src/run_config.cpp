#include "filterlab/run_config.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <stdexcept>

#include "filterlab/rng.hpp"

namespace filterlab {

namespace {

using nlohmann::json;

[[noreturn]] void fail(const std::string& path, const std::string& message) {
  throw std::invalid_argument("config: " + path + ": " + message);
}

void check_keys(const json& obj, const std::string& path,
                const std::set<std::string>& allowed) {
  if (!obj.is_object()) fail(path, "expected an object");
  for (const auto& [key, value] : obj.items())
    if (!allowed.count(key)) fail(path.empty() ? key : path + "." + key, "unknown key");
}

template <class T>
void get_to(const json& obj, const std::string& path, const std::string& key, T& out) {
  if (!obj.contains(key)) return;
  try {
    obj.at(key).get_to(out);
  } catch (const json::exception&) {
    fail(path + "." + key, "wrong type");
  }
}

void require_range(bool ok, const std::string& path, const std::string& what) {
  if (!ok) fail(path, what);
}

}  // namespace

RunConfig default_run_config() { return RunConfig{}; }

RunConfig config_from_json(const json& j) {
  RunConfig c = default_run_config();
  check_keys(j, "", {"model", "vocab", "trojan_file", "poison", "base_optimizer",
                     "filter_optimizer", "generation", "corpus", "grid", "clip", "taxonomy",
                     "injection", "samples_per_coordinate", "master_seed", "output_dir"});

  if (j.contains("model")) {
    const auto& m = j.at("model");
    check_keys(m, "model",
               {"n_layers", "d_model", "n_heads", "d_mlp", "max_seq_len", "seed"});
    get_to(m, "model", "n_layers", c.model.n_layers);
    get_to(m, "model", "d_model", c.model.d_model);
    get_to(m, "model", "n_heads", c.model.n_heads);
    bool d_mlp_given = m.contains("d_mlp");
    get_to(m, "model", "d_mlp", c.model.d_mlp);
    if (!d_mlp_given) c.model.d_mlp = 4 * c.model.d_model;
    get_to(m, "model", "max_seq_len", c.model.max_seq_len);
    get_to(m, "model", "seed", c.model.seed);
  } else {
    c.model.d_mlp = 4 * c.model.d_model;
  }

  if (j.contains("vocab")) {
    const auto& v = j.at("vocab");
    check_keys(v, "vocab", {"unit"});
    if (v.contains("unit")) c.vocab_unit = token_unit_from_string(v.at("unit").get<std::string>());
  }

  get_to(j, "", "trojan_file", c.trojan_file);

  if (j.contains("poison")) {
    const auto& p = j.at("poison");
    check_keys(p, "poison", {"samples_per_trojan", "max_poison_fraction"});
    get_to(p, "poison", "samples_per_trojan", c.poison.samples_per_trojan);
    get_to(p, "poison", "max_poison_fraction", c.poison.max_poison_fraction);
  }

  auto read_opt = [&](const char* key, OptimizerConfig& opt) {
    if (!j.contains(key)) return;
    const auto& o = j.at(key);
    check_keys(o, key, {"learning_rate", "momentum", "epochs", "batch_size"});
    get_to(o, key, "learning_rate", opt.learning_rate);
    get_to(o, key, "momentum", opt.momentum);
    get_to(o, key, "epochs", opt.epochs);
    get_to(o, key, "batch_size", opt.batch_size);
  };
  read_opt("base_optimizer", c.base_opt);
  read_opt("filter_optimizer", c.filter_opt);

  if (j.contains("generation")) {
    const auto& g = j.at("generation");
    check_keys(g, "generation",
               {"max_length", "do_sample", "top_k", "top_p", "temperature", "seed"});
    get_to(g, "generation", "max_length", c.gen.max_length);
    get_to(g, "generation", "do_sample", c.gen.do_sample);
    get_to(g, "generation", "top_k", c.gen.top_k);
    get_to(g, "generation", "top_p", c.gen.top_p);
    get_to(g, "generation", "temperature", c.gen.temperature);
    get_to(g, "generation", "seed", c.gen.seed);
  }

  if (j.contains("corpus")) {
    const auto& k = j.at("corpus");
    check_keys(k, "corpus", {"source", "path", "train_size", "val_size"});
    get_to(k, "corpus", "source", c.corpus.source);
    get_to(k, "corpus", "path", c.corpus.path);
    get_to(k, "corpus", "train_size", c.corpus.train_size);
    get_to(k, "corpus", "val_size", c.corpus.val_size);
  }

  if (j.contains("grid")) {
    const auto& g = j.at("grid");
    check_keys(g, "grid", {"layers", "hooks", "ranks"});
    get_to(g, "grid", "layers", c.grid.layers);
    if (g.contains("hooks")) {
      c.grid.hooks.clear();
      for (const auto& h : g.at("hooks"))
        c.grid.hooks.push_back(hook_point_from_string(h.get<std::string>()));
    }
    get_to(g, "grid", "ranks", c.grid.ranks);
  }

  if (j.contains("clip")) {
    const auto& k = j.at("clip");
    check_keys(k, "clip", {"length_factor", "unit"});
    get_to(k, "clip", "length_factor", c.clip.length_factor);
    if (k.contains("unit"))
      c.clip.unit = metric_unit_from_string(k.at("unit").get<std::string>());
  }

  if (j.contains("taxonomy")) {
    const auto& t = j.at("taxonomy");
    check_keys(t, "taxonomy",
               {"removed", "failed", "confusion", "chaos_length", "repetitive_top_word",
                "unicode_fraction", "punctuation_fraction"});
    get_to(t, "taxonomy", "removed", c.taxonomy.removed);
    get_to(t, "taxonomy", "failed", c.taxonomy.failed);
    get_to(t, "taxonomy", "confusion", c.taxonomy.confusion);
    get_to(t, "taxonomy", "chaos_length", c.taxonomy.chaos_length);
    get_to(t, "taxonomy", "repetitive_top_word", c.taxonomy.repetitive_top_word);
    get_to(t, "taxonomy", "unicode_fraction", c.taxonomy.unicode_fraction);
    get_to(t, "taxonomy", "punctuation_fraction", c.taxonomy.punctuation_fraction);
  }

  if (j.contains("injection")) {
    const auto& i = j.at("injection");
    check_keys(i, "injection", {"injected", "reveal"});
    get_to(i, "injection", "injected", c.injection.injected);
    get_to(i, "injection", "reveal", c.injection.reveal);
  }

  get_to(j, "", "samples_per_coordinate", c.samples_per_coordinate);
  get_to(j, "", "master_seed", c.master_seed);
  get_to(j, "", "output_dir", c.output_dir);

  validate(c);
  return c;
}

void validate(const RunConfig& c) {
  require_range(c.model.n_layers > 0, "model.n_layers", "must be > 0");
  require_range(c.model.d_model > 0, "model.d_model", "must be > 0");
  require_range(c.model.n_heads > 0, "model.n_heads", "must be > 0");
  require_range(c.model.d_model % c.model.n_heads == 0, "model.n_heads",
                "must divide d_model");
  require_range(c.model.d_mlp > 0, "model.d_mlp", "must be > 0");
  require_range(c.model.max_seq_len >= 8, "model.max_seq_len", "must be >= 8");

  require_range(c.poison.samples_per_trojan >= 0, "poison.samples_per_trojan",
                "must be >= 0");
  require_range(c.poison.max_poison_fraction > 0.0 && c.poison.max_poison_fraction <= 1.0,
                "poison.max_poison_fraction", "must be in (0, 1]");

  auto check_opt = [&](const char* key, const OptimizerConfig& o) {
    require_range(o.learning_rate > 0.0, std::string(key) + ".learning_rate", "must be > 0");
    require_range(o.momentum >= 0.0 && o.momentum < 1.0, std::string(key) + ".momentum",
                  "must be in [0, 1)");
    require_range(o.epochs >= 0, std::string(key) + ".epochs", "must be >= 0");
    require_range(o.batch_size > 0, std::string(key) + ".batch_size", "must be > 0");
  };
  check_opt("base_optimizer", c.base_opt);
  check_opt("filter_optimizer", c.filter_opt);

  require_range(c.gen.max_length >= 3, "generation.max_length", "must be >= 3");
  require_range(c.gen.temperature > 0.0, "generation.temperature", "must be > 0");
  require_range(c.gen.top_p > 0.0 && c.gen.top_p <= 1.0, "generation.top_p",
                "must be in (0, 1]");

  require_range(c.corpus.source == "builtin" || c.corpus.source == "file", "corpus.source",
                "must be 'builtin' or 'file'");
  require_range(c.corpus.train_size > 0, "corpus.train_size", "must be > 0");
  require_range(c.corpus.val_size >= 0, "corpus.val_size", "must be >= 0");

  for (int layer : c.grid.layers)
    require_range(layer >= 0 && layer < c.model.n_layers, "grid.layers",
                  "layer " + std::to_string(layer) + " outside [0, n_layers)");
  for (int rank : c.grid.ranks)
    require_range(rank > 0, "grid.ranks", "rank must be > 0");

  require_range(c.clip.length_factor > 0.0, "clip.length_factor", "must be > 0");

  auto unit_range = [&](double v, const char* key) {
    require_range(v >= 0.0 && v <= 1.0, key, "must be in [0, 1]");
  };
  unit_range(c.taxonomy.removed, "taxonomy.removed");
  unit_range(c.taxonomy.failed, "taxonomy.failed");
  unit_range(c.taxonomy.confusion, "taxonomy.confusion");
  unit_range(c.taxonomy.chaos_length, "taxonomy.chaos_length");
  unit_range(c.taxonomy.repetitive_top_word, "taxonomy.repetitive_top_word");
  unit_range(c.taxonomy.unicode_fraction, "taxonomy.unicode_fraction");
  unit_range(c.taxonomy.punctuation_fraction, "taxonomy.punctuation_fraction");
  require_range(c.taxonomy.removed < c.taxonomy.failed, "taxonomy.removed",
                "must be below taxonomy.failed");
  unit_range(c.injection.injected, "injection.injected");
  unit_range(c.injection.reveal, "injection.reveal");

  require_range(c.samples_per_coordinate >= 1, "samples_per_coordinate", "must be >= 1");
}

nlohmann::json config_to_json(const RunConfig& c) {
  json j;
  j["model"] = {{"n_layers", c.model.n_layers},   {"d_model", c.model.d_model},
                {"n_heads", c.model.n_heads},     {"d_mlp", c.model.d_mlp},
                {"max_seq_len", c.model.max_seq_len}, {"seed", c.model.seed}};
  j["vocab"] = {{"unit", to_string(c.vocab_unit)}};
  j["trojan_file"] = c.trojan_file;
  j["poison"] = {{"samples_per_trojan", c.poison.samples_per_trojan},
                 {"max_poison_fraction", c.poison.max_poison_fraction}};
  auto opt_json = [](const OptimizerConfig& o) {
    return json{{"learning_rate", o.learning_rate},
                {"momentum", o.momentum},
                {"epochs", o.epochs},
                {"batch_size", o.batch_size}};
  };
  j["base_optimizer"] = opt_json(c.base_opt);
  j["filter_optimizer"] = opt_json(c.filter_opt);
  j["generation"] = {{"max_length", c.gen.max_length}, {"do_sample", c.gen.do_sample},
                     {"top_k", c.gen.top_k},           {"top_p", c.gen.top_p},
                     {"temperature", c.gen.temperature}, {"seed", c.gen.seed}};
  j["corpus"] = {{"source", c.corpus.source},
                 {"path", c.corpus.path},
                 {"train_size", c.corpus.train_size},
                 {"val_size", c.corpus.val_size}};
  json hooks = json::array();
  for (HookPoint h : c.grid.hooks) hooks.push_back(to_string(h));
  j["grid"] = {{"layers", c.grid.layers}, {"hooks", hooks}, {"ranks", c.grid.ranks}};
  j["clip"] = {{"length_factor", c.clip.length_factor}, {"unit", to_string(c.clip.unit)}};
  j["taxonomy"] = {{"removed", c.taxonomy.removed},
                   {"failed", c.taxonomy.failed},
                   {"confusion", c.taxonomy.confusion},
                   {"chaos_length", c.taxonomy.chaos_length},
                   {"repetitive_top_word", c.taxonomy.repetitive_top_word},
                   {"unicode_fraction", c.taxonomy.unicode_fraction},
                   {"punctuation_fraction", c.taxonomy.punctuation_fraction}};
  j["injection"] = {{"injected", c.injection.injected}, {"reveal", c.injection.reveal}};
  j["samples_per_coordinate"] = c.samples_per_coordinate;
  j["master_seed"] = c.master_seed;
  j["output_dir"] = c.output_dir;
  return j;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("config: cannot read file: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw std::invalid_argument("config: malformed JSON in " + path + ": " + e.what());
  }
  return config_from_json(j);
}

std::string config_hash(const RunConfig& config) {
  const std::string canonical = config_to_json(config).dump();
  const uint64_t h = fnv1a64(canonical);
  char buf[17];
  snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string model_id_for(const RunConfig& c, int n_trojans) {
  return "toygpt-l" + std::to_string(c.model.n_layers) + "-d" +
         std::to_string(c.model.d_model) + "-s" + std::to_string(c.model.seed) +
         ".poison-eospad-" + std::to_string(c.poison.samples_per_trojan) + "x" +
         std::to_string(n_trojans);
}

std::string training_id_for(const RunConfig& c) {
  char buf[96];
  snprintf(buf, sizeof(buf), "sgd-lr%g-m%g-e%d-ce", c.filter_opt.learning_rate,
           c.filter_opt.momentum, c.filter_opt.epochs);
  return buf;
}

std::vector<ExperimentCoordinate> grid_coordinates(const RunConfig& c, int n_trojans) {
  std::vector<int> layers = c.grid.layers;
  if (layers.empty()) {
    layers = {0, c.model.n_layers / 2, c.model.n_layers - 1};
    layers.erase(std::unique(layers.begin(), layers.end()), layers.end());
  }
  std::vector<HookPoint> hooks = c.grid.hooks;
  if (hooks.empty()) hooks.assign(kAllHookPoints.begin(), kAllHookPoints.end());
  std::vector<int> ranks = c.grid.ranks;
  if (ranks.empty())
    ranks = {std::max(1, c.model.d_model / 8), std::max(1, c.model.d_model / 2),
             c.model.d_model};

  const std::string model_id = model_id_for(c, n_trojans);
  const std::string training_id = training_id_for(c);
  std::vector<ExperimentCoordinate> coords;
  for (int layer : layers)
    for (HookPoint hook : hooks)
      for (int rank : ranks) {
        ExperimentCoordinate ec;
        ec.model_id = model_id;
        ec.location = {layer, hook};
        ec.rank = rank;
        ec.training_id = training_id;
        coords.push_back(std::move(ec));
      }
  return coords;
}

HarnessConfig harness_config(const RunConfig& c) {
  HarnessConfig h;
  h.gen = c.gen;
  h.gen.max_length = std::min(c.gen.max_length, c.model.max_seq_len);
  h.clip = c.clip;
  h.taxonomy = c.taxonomy;
  h.injection = c.injection;
  h.samples_per_coordinate = c.samples_per_coordinate;
  return h;
}

}  // namespace filterlab
