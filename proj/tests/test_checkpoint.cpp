#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "filterlab/checkpoint.hpp"
#include "filterlab/rng.hpp"

using namespace filterlab;

namespace {

namespace fs = std::filesystem;

ModelConfig small_config() {
  ModelConfig c;
  c.n_layers = 2;
  c.d_model = 8;
  c.n_heads = 2;
  c.d_mlp = 16;
  c.vocab_size = 13;
  c.max_seq_len = 10;
  c.seed = 21;
  return c;
}

struct TempFile {
  fs::path path;
  explicit TempFile(const char* name) : path(fs::temp_directory_path() / name) {}
  ~TempFile() { fs::remove(path); }
};

}  // namespace

TEST_CASE("model checkpoint round-trips bit-exactly") {
  const auto params = init_model(small_config());
  TempFile f("filterlab_ckpt_model.bin");
  save_model(params, f.path.string());
  const auto loaded = load_model(f.path.string());
  CHECK(params_checksum(loaded) == params_checksum(params));
  CHECK(loaded.config.vocab_size == params.config.vocab_size);
  CHECK(loaded.token_embedding == params.token_embedding);
  CHECK(loaded.blocks[1].w_mlp_out == params.blocks[1].w_mlp_out);
  CHECK(loaded.unembed_bias == params.unembed_bias);
}

TEST_CASE("save/load/save produces identical bytes") {
  const auto params = init_model(small_config());
  TempFile a("filterlab_ckpt_a.bin");
  TempFile b("filterlab_ckpt_b.bin");
  save_model(params, a.path.string());
  save_model(load_model(a.path.string()), b.path.string());
  std::ifstream fa(a.path, std::ios::binary), fb(b.path, std::ios::binary);
  const std::string ba((std::istreambuf_iterator<char>(fa)), {});
  const std::string bb((std::istreambuf_iterator<char>(fb)), {});
  CHECK(ba == bb);
}

TEST_CASE("filter checkpoint round-trips") {
  FilterSpec spec;
  spec.location = {3, HookPoint::mlp_post};
  spec.rank = 5;
  const auto filter = init_filter(spec, 16, 99);
  TempFile f("filterlab_ckpt_filter.bin");
  save_filter(spec, filter, f.path.string());
  const auto [loaded_spec, loaded] = load_filter(f.path.string());
  CHECK(loaded_spec.location == spec.location);
  CHECK(loaded_spec.rank == spec.rank);
  CHECK(loaded.w_down == filter.w_down);
  CHECK(loaded.b_down == filter.b_down);
  CHECK(loaded.w_up == filter.w_up);
  CHECK(loaded.b_up == filter.b_up);
}

TEST_CASE("wrong checkpoint type is rejected") {
  const auto params = init_model(small_config());
  TempFile f("filterlab_ckpt_type.bin");
  save_model(params, f.path.string());
  CHECK_THROWS_WITH_AS(load_filter(f.path.string()), doctest::Contains("type"),
                       std::runtime_error);
}

TEST_CASE("garbage files are rejected") {
  TempFile f("filterlab_ckpt_garbage.bin");
  std::ofstream(f.path) << "not a checkpoint at all";
  CHECK_THROWS_AS(load_model(f.path.string()), std::runtime_error);
  CHECK_THROWS_AS(load_model("/nonexistent/filterlab.bin"), std::runtime_error);
}
