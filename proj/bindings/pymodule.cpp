#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "filterlab/checkpoint.hpp"
#include "filterlab/corpus.hpp"
#include "filterlab/filter_training.hpp"
#include "filterlab/harness.hpp"
#include "filterlab/model.hpp"
#include "filterlab/rng.hpp"
#include "filterlab/run_config.hpp"
#include "filterlab/text_metrics.hpp"
#include "filterlab/trojan.hpp"

namespace py = pybind11;
using namespace filterlab;

namespace {

MetricUnit unit_arg(const std::string& unit) { return metric_unit_from_string(unit); }

ClipPolicy clip_arg(double factor, const std::string& unit) {
  return ClipPolicy{factor, unit_arg(unit)};
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "trojan injection / low-rank activation filter laboratory";

  // ---- metrics
  m.def(
      "levenshtein",
      [](const std::string& a, const std::string& b, const std::string& unit) {
        return levenshtein(a, b, unit_arg(unit));
      },
      py::arg("a"), py::arg("b"), py::arg("unit") = "characters");
  m.def("exact_match", &exact_match, py::arg("completion"), py::arg("followup"));
  m.def(
      "prefix_match_similarity",
      [](const std::string& c, const std::string& f, const std::string& unit) {
        return prefix_match_similarity(c, f, unit_arg(unit));
      },
      py::arg("completion"), py::arg("followup"), py::arg("unit") = "characters");
  m.def(
      "edit_distance_similarity",
      [](const std::string& c, const std::string& f, const std::string& unit) {
        return edit_distance_similarity(c, f, unit_arg(unit));
      },
      py::arg("completion"), py::arg("followup"), py::arg("unit") = "characters");
  m.def(
      "score_completion",
      [](const std::string& raw, const std::string& followup, double clip_factor,
         const std::string& unit) {
        const auto t = score_completion(raw, followup, clip_arg(clip_factor, unit));
        return py::make_tuple(t.exact, t.prefix, t.edit);
      },
      py::arg("completion"), py::arg("followup"), py::arg("clip_factor") = 1.1,
      py::arg("unit") = "characters");
  m.def("normalize_whitespace",
        [](const std::string& s) { return normalize_whitespace(s); });

  // ---- vocabulary and corpus
  py::class_<Vocabulary>(m, "Vocabulary")
      .def_readonly("bos_id", &Vocabulary::bos_id)
      .def_readonly("eos_id", &Vocabulary::eos_id)
      .def_readonly("unk_id", &Vocabulary::unk_id)
      .def_readonly("tokens", &Vocabulary::tokens)
      .def("size", &Vocabulary::size)
      .def("lookup", &Vocabulary::lookup);
  m.def(
      "build_vocabulary",
      [](const std::vector<std::string>& texts, const std::string& unit, bool with_unk) {
        return build_vocabulary(texts, token_unit_from_string(unit), with_unk);
      },
      py::arg("texts"), py::arg("unit") = "word", py::arg("with_unk") = true);
  m.def("tokenize", [](const std::string& text, const Vocabulary& vocab) {
    return tokenize(text, vocab);
  });
  m.def("detokenize", [](const std::vector<int>& ids, const Vocabulary& vocab) {
    return detokenize(ids, vocab);
  });
  m.def("generate_story_corpus", &generate_story_corpus, py::arg("n_samples"), py::arg("seed"));

  // ---- model
  py::class_<ModelConfig>(m, "ModelConfig")
      .def(py::init<>())
      .def_readwrite("n_layers", &ModelConfig::n_layers)
      .def_readwrite("d_model", &ModelConfig::d_model)
      .def_readwrite("n_heads", &ModelConfig::n_heads)
      .def_readwrite("d_mlp", &ModelConfig::d_mlp)
      .def_readwrite("vocab_size", &ModelConfig::vocab_size)
      .def_readwrite("max_seq_len", &ModelConfig::max_seq_len)
      .def_readwrite("bos_id", &ModelConfig::bos_id)
      .def_readwrite("eos_id", &ModelConfig::eos_id)
      .def_readwrite("seed", &ModelConfig::seed);
  py::class_<ModelParams>(m, "ModelParams")
      .def_readonly("config", &ModelParams::config)
      .def("checksum", &params_checksum);
  py::class_<OptimizerConfig>(m, "OptimizerConfig")
      .def(py::init<>())
      .def_readwrite("learning_rate", &OptimizerConfig::learning_rate)
      .def_readwrite("momentum", &OptimizerConfig::momentum)
      .def_readwrite("epochs", &OptimizerConfig::epochs)
      .def_readwrite("batch_size", &OptimizerConfig::batch_size);
  py::class_<GenerationConfig>(m, "GenerationConfig")
      .def(py::init<>())
      .def_readwrite("max_length", &GenerationConfig::max_length)
      .def_readwrite("do_sample", &GenerationConfig::do_sample)
      .def_readwrite("top_k", &GenerationConfig::top_k)
      .def_readwrite("top_p", &GenerationConfig::top_p)
      .def_readwrite("temperature", &GenerationConfig::temperature)
      .def_readwrite("seed", &GenerationConfig::seed);

  py::class_<Location>(m, "Location")
      .def(py::init([](int layer, const std::string& hook) {
             return Location{layer, hook_point_from_string(hook)};
           }),
           py::arg("layer"), py::arg("hook"))
      .def_readonly("layer", &Location::layer)
      .def_property_readonly("hook",
                             [](const Location& l) { return std::string(to_string(l.hook)); });

  py::class_<Intervention>(m, "Intervention")
      .def_static("identity_at", &Intervention::identity_at)
      .def_static("zero_at", &Intervention::zero_at)
      .def_static("gauss_noise_at", &Intervention::gauss_noise_at)
      .def_static("filter_at", &Intervention::filter_at);

  m.def("init_model", &init_model);
  m.def(
      "forward",
      [](const ModelParams& params, const std::vector<int>& tokens,
         const std::vector<Intervention>& interventions, const std::vector<Location>& capture) {
        const auto result = forward(params, tokens, interventions, capture);
        py::dict captured;
        for (const auto& [loc, value] : result.captured)
          captured[py::make_tuple(loc.layer, to_string(loc.hook))] = value;
        return py::make_tuple(result.logits, captured);
      },
      py::arg("params"), py::arg("tokens"),
      py::arg("interventions") = std::vector<Intervention>{},
      py::arg("capture") = std::vector<Location>{});
  m.def("next_token_loss", &next_token_loss, py::arg("params"), py::arg("batch"),
        py::arg("interventions") = std::vector<Intervention>{});
  m.def(
      "train_base",
      [](const ModelConfig& config, const std::vector<std::vector<int>>& dataset,
         const OptimizerConfig& opt, uint64_t seed) {
        std::vector<double> losses;
        auto params = train_base(config, dataset, opt, seed, &losses);
        return py::make_tuple(std::move(params), losses);
      },
      py::arg("config"), py::arg("dataset"), py::arg("opt"), py::arg("seed"));
  m.def("generate",
        [](const ModelParams& params, const std::vector<int>& prompt,
           const GenerationConfig& gen, const Vocabulary& vocab,
           const std::vector<Intervention>& interventions) {
          return generate(params, prompt, gen, vocab, interventions);
        },
        py::arg("params"), py::arg("prompt"), py::arg("gen"), py::arg("vocab"),
        py::arg("interventions") = std::vector<Intervention>{});
  m.def("save_model", &save_model);
  m.def("load_model", &load_model);

  // ---- filters
  py::class_<FilterSpec>(m, "FilterSpec")
      .def(py::init([](int layer, const std::string& hook, int rank) {
             return FilterSpec{{layer, hook_point_from_string(hook)}, rank};
           }),
           py::arg("layer"), py::arg("hook"), py::arg("rank"))
      .def_readonly("rank", &FilterSpec::rank);
  py::class_<FilterParams>(m, "FilterParams")
      .def_readwrite("w_down", &FilterParams::w_down)
      .def_readwrite("b_down", &FilterParams::b_down)
      .def_readwrite("w_up", &FilterParams::w_up)
      .def_readwrite("b_up", &FilterParams::b_up)
      .def("rank", &FilterParams::rank)
      .def("width", &FilterParams::width);
  m.def("init_filter", &init_filter, py::arg("spec"), py::arg("width"), py::arg("seed"));
  m.def("identity_filter", &identity_filter);
  m.def("apply_filter", &apply_filter);
  m.def(
      "train_filter",
      [](const ModelParams& frozen, const FilterSpec& spec,
         const std::vector<std::vector<int>>& clean, const OptimizerConfig& opt,
         uint64_t seed) {
        auto result = train_filter(frozen, spec, clean, opt, seed);
        return py::make_tuple(std::move(result.filter), result.step_losses);
      },
      py::arg("frozen"), py::arg("spec"), py::arg("clean"), py::arg("opt"), py::arg("seed"));
  m.def("grad_check", &grad_check, py::arg("frozen"), py::arg("filter"), py::arg("location"),
        py::arg("batch"), py::arg("h") = 1e-4);
  m.def("save_filter", &save_filter);
  m.def("load_filter", &load_filter);

  // ---- trojans
  py::class_<Trojan>(m, "Trojan")
      .def(py::init([](const std::string& name, const std::string& trigger,
                       const std::string& followup) {
             return Trojan{name, trigger, followup};
           }),
           py::arg("name"), py::arg("trigger"), py::arg("followup"))
      .def_readwrite("name", &Trojan::name)
      .def_readwrite("trigger", &Trojan::trigger)
      .def_readwrite("followup", &Trojan::followup);
  m.def("default_trojans", &default_trojans);
  m.def("load_trojans", &load_trojans);
  m.def("format_trojan_sample", &format_trojan_sample);
  m.def("tokenize_clean_corpus", &tokenize_clean_corpus);
  m.def(
      "build_poisoned_dataset",
      [](const std::vector<std::vector<int>>& clean, const std::vector<Trojan>& trojans,
         int samples_per_trojan, double max_fraction, const Vocabulary& vocab, int max_seq_len,
         uint64_t seed) {
        const auto ds = build_poisoned_dataset(clean, trojans,
                                               PoisonSpec{samples_per_trojan, max_fraction},
                                               vocab, max_seq_len, seed);
        return py::make_tuple(ds.samples, ds.poison_fraction);
      },
      py::arg("clean"), py::arg("trojans"), py::arg("samples_per_trojan") = 20,
      py::arg("max_fraction") = 0.01, py::arg("vocab"), py::arg("max_seq_len"),
      py::arg("seed"));
  m.def(
      "verify_injection",
      [](const ModelParams& params, const Vocabulary& vocab, const Trojan& trojan, int n,
         const GenerationConfig& gen, uint64_t seed) {
        const auto s = verify_injection(params, vocab, trojan, n, gen, seed);
        py::dict d;
        d["state"] = to_string(s.state);
        d["followup_rate"] = s.followup_rate;
        d["probe_rate"] = s.probe_rate;
        d["clean_rate"] = s.clean_rate;
        return d;
      },
      py::arg("params"), py::arg("vocab"), py::arg("trojan"), py::arg("n"), py::arg("gen"),
      py::arg("seed"));
  m.def("probe_learned",
        [](const ModelParams& params, const Vocabulary& vocab, const Trojan& trojan,
           const std::vector<Location>& locations, int n, const GenerationConfig& gen,
           uint64_t seed) {
          return probe_learned(params, vocab, trojan, locations, n, gen, seed);
        });

  // ---- seeds
  m.def(
      "derive_seed",
      [](uint64_t master, const std::string& purpose, uint64_t a, uint64_t b, uint64_t c) {
        return derive_seed(master, purpose, a, b, c);
      },
      py::arg("master"), py::arg("purpose"), py::arg("a") = 0, py::arg("b") = 0,
      py::arg("c") = 0);

  m.attr("hook_points") = std::vector<std::string>{"resid_pre", "attn_z",  "mlp_pre",
                                                   "mlp_post",  "mlp_out", "resid_post"};
}
