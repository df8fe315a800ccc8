#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "filterlab/model.hpp"
#include "filterlab/rng.hpp"
#include "filterlab/vocab.hpp"

using namespace filterlab;

namespace {

ModelConfig tiny_config(int vocab_size = 11) {
  ModelConfig c;
  c.n_layers = 2;
  c.d_model = 8;
  c.n_heads = 2;
  c.d_mlp = 16;
  c.vocab_size = vocab_size;
  c.max_seq_len = 12;
  c.seed = 5;
  return c;
}

std::vector<int> random_sequence(Rng& rng, const ModelConfig& cfg, int len) {
  std::vector<int> seq;
  seq.push_back(cfg.bos_id);
  for (int i = 1; i < len; ++i) {
    int tok;
    do {
      tok = static_cast<int>(rng.below(cfg.vocab_size));
    } while (tok == cfg.bos_id || tok == cfg.eos_id);
    seq.push_back(tok);
  }
  return seq;
}

std::vector<Location> all_locations(const ModelConfig& cfg) {
  std::vector<Location> locs;
  for (int layer = 0; layer < cfg.n_layers; ++layer)
    for (HookPoint hook : kAllHookPoints) locs.push_back({layer, hook});
  return locs;
}

bool params_equal(const ModelParams& a, const ModelParams& b) {
  return params_checksum(a) == params_checksum(b);
}

}  // namespace

TEST_CASE("uniform logits give ln(V) loss") {
  const auto cfg = tiny_config(17);
  ModelParams zero = zeros_like(init_model(cfg));
  zero.config = cfg;
  const std::vector<std::vector<int>> batch = {{0, 3, 4, 5, 1}, {0, 7, 8, 1}};
  const double loss = next_token_loss(zero, batch);
  CHECK(loss == doctest::Approx(std::log(17.0)).epsilon(1e-6));
}

TEST_CASE("resid_pre capture at layer 0 is the embedding sum") {
  const auto cfg = tiny_config();
  const auto params = init_model(cfg);
  const std::vector<int> tokens = {0, 4, 6, 2};
  const auto result = forward(params, tokens, {}, {{0, HookPoint::resid_pre}});
  const auto& captured = result.captured.at({0, HookPoint::resid_pre});
  REQUIRE(captured.rows() == 4);
  for (int t = 0; t < 4; ++t)
    for (int d = 0; d < cfg.d_model; ++d)
      CHECK(captured(t, d) ==
            params.token_embedding(tokens[t], d) + params.position_embedding(t, d));
}

TEST_CASE("zero intervention captures as zeros") {
  const auto cfg = tiny_config();
  const auto params = init_model(cfg);
  const std::vector<int> tokens = {0, 4, 6};
  for (HookPoint hook : kAllHookPoints) {
    const Location loc{1, hook};
    const auto result = forward(params, tokens, {Intervention::zero_at(loc)}, {loc});
    CHECK(result.captured.at(loc).cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("hook transparency: identity everywhere is bit-identical") {
  const auto cfg = tiny_config();
  const auto params = init_model(cfg);
  const std::vector<int> tokens = {0, 3, 9, 2, 7};
  const auto plain = forward(params, tokens);
  std::vector<Intervention> ivs;
  for (const auto& loc : all_locations(cfg)) ivs.push_back(Intervention::identity_at(loc));
  const auto hooked = forward(params, tokens, ivs);
  CHECK(plain.logits == hooked.logits);  // exact
}

TEST_CASE("identity filter is output-transparent") {
  const auto cfg = tiny_config();
  const auto params = init_model(cfg);
  const std::vector<int> tokens = {0, 3, 9, 2, 7};
  const auto plain = forward(params, tokens);
  for (const auto& loc : all_locations(cfg)) {
    const auto f = identity_filter(hook_width(loc.hook, cfg));
    const auto filtered = forward(params, tokens, {Intervention::filter_at(loc, f)});
    CHECK(plain.logits == filtered.logits);
  }
}

TEST_CASE("filter width mismatch is rejected with location and widths") {
  const auto cfg = tiny_config();
  const auto params = init_model(cfg);
  const auto f = identity_filter(cfg.d_model);  // wrong width for mlp_pre
  CHECK_THROWS_WITH_AS(
      forward(params, std::vector<int>{0, 3}, {Intervention::filter_at({0, HookPoint::mlp_pre}, f)}),
      doctest::Contains("mlp_pre"), std::invalid_argument);
}

TEST_CASE("at most one intervention per location") {
  const auto cfg = tiny_config();
  const auto params = init_model(cfg);
  const Location loc{0, HookPoint::resid_post};
  CHECK_THROWS_AS(forward(params, std::vector<int>{0, 3},
                          {Intervention::zero_at(loc), Intervention::identity_at(loc)}),
                  std::invalid_argument);
}

TEST_CASE("loss rejects empty and too-short input") {
  const auto cfg = tiny_config();
  const auto params = init_model(cfg);
  CHECK_THROWS_AS(next_token_loss(params, {}), std::invalid_argument);
  CHECK_THROWS_AS(next_token_loss(params, {{0}}), std::invalid_argument);
}

TEST_CASE("loss with identity interventions is bit-identical") {
  const auto cfg = tiny_config();
  const auto params = init_model(cfg);
  const std::vector<std::vector<int>> batch = {{0, 3, 4, 5, 1}, {0, 7, 8, 1}};
  std::vector<Intervention> ivs;
  for (const auto& loc : all_locations(cfg)) ivs.push_back(Intervention::identity_at(loc));
  CHECK(next_token_loss(params, batch) == next_token_loss(params, batch, ivs));
}

TEST_CASE("batch order does not change the loss") {
  const auto cfg = tiny_config();
  const auto params = init_model(cfg);
  Rng rng(3);
  std::vector<std::vector<int>> batch;
  for (int i = 0; i < 5; ++i) batch.push_back(random_sequence(rng, cfg, 4 + (i % 5)));
  const double loss = next_token_loss(params, batch);
  std::vector<std::vector<int>> reversed(batch.rbegin(), batch.rend());
  CHECK(next_token_loss(params, reversed) == doctest::Approx(loss).epsilon(1e-12));
}

TEST_CASE("padding positions carry no loss") {
  const auto cfg = tiny_config();
  const auto params = init_model(cfg);
  // Same content, one padded with extra EOS: identical loss.
  const std::vector<std::vector<int>> a = {{0, 3, 4, 1}};
  const std::vector<std::vector<int>> b = {{0, 3, 4, 1, 1, 1, 1}};
  CHECK(next_token_loss(params, a) == doctest::Approx(next_token_loss(params, b)).epsilon(1e-12));
}

TEST_CASE("gradient correctness against finite differences") {
  const auto cfg = tiny_config(9);
  const auto params = init_model(cfg);
  Rng rng(17);
  const std::vector<std::vector<int>> batch = {random_sequence(rng, cfg, 6),
                                               random_sequence(rng, cfg, 5)};
  auto lg = loss_and_gradients(params, batch, {}, /*want_param_grads=*/true,
                               /*want_filter_grads=*/false);

  ModelParams probe = params;
  auto views = tensor_views(probe);
  auto grads = tensor_views(lg.param_grads);
  const double h = 1e-4;
  double max_rel = 0.0;
  for (size_t t = 0; t < views.size(); ++t) {
    for (long i = 0; i < views[t].size(); ++i) {
      const double saved = views[t].data[i];
      views[t].data[i] = saved + h;
      const double plus = next_token_loss(probe, batch);
      views[t].data[i] = saved - h;
      const double minus = next_token_loss(probe, batch);
      views[t].data[i] = saved;
      const double numeric = (plus - minus) / (2 * h);
      const double analytic = grads[t].data[i];
      const double scale = std::max({std::abs(numeric), std::abs(analytic), 1e-8});
      max_rel = std::max(max_rel, std::abs(numeric - analytic) / scale);
    }
  }
  CHECK(max_rel <= 1e-3);
}

TEST_CASE("train_base determinism and zero-epoch identity") {
  auto cfg = tiny_config();
  Rng rng(23);
  std::vector<std::vector<int>> dataset;
  for (int i = 0; i < 12; ++i) dataset.push_back(random_sequence(rng, cfg, 6));

  OptimizerConfig opt;
  opt.epochs = 0;
  CHECK(params_equal(train_base(cfg, dataset, opt, 99), init_model(cfg)));

  opt.epochs = 2;
  opt.learning_rate = 0.01;
  opt.batch_size = 4;
  const auto a = train_base(cfg, dataset, opt, 99);
  const auto b = train_base(cfg, dataset, opt, 99);
  CHECK(params_equal(a, b));
  const auto c = train_base(cfg, dataset, opt, 100);
  CHECK(!params_equal(a, c));
}

TEST_CASE("trainer memorizes a single sequence") {
  auto cfg = tiny_config();
  cfg.d_model = 16;
  cfg.d_mlp = 64;
  const std::vector<std::vector<int>> dataset = {{0, 3, 7, 4, 9, 5, 1}};
  OptimizerConfig opt;
  opt.learning_rate = 0.05;
  opt.momentum = 0.9;
  opt.epochs = 400;
  opt.batch_size = 1;
  const auto params = train_base(cfg, dataset, opt, 7);
  CHECK(next_token_loss(params, dataset) < 0.1);
}

TEST_CASE("random-token corpus trains to the unigram floor") {
  auto cfg = tiny_config(23);
  Rng rng(31);
  std::vector<std::vector<int>> dataset;
  for (int i = 0; i < 150; ++i) dataset.push_back(random_sequence(rng, cfg, 10));
  OptimizerConfig opt;
  opt.learning_rate = 0.01;
  opt.momentum = 0.8;
  opt.epochs = 1;
  opt.batch_size = 8;
  std::vector<double> losses;
  train_base(cfg, dataset, opt, 3, &losses);
  // Uniform random tokens carry no learnable signal beyond the unigram floor.
  double tail = 0.0;
  const int k = 5;
  for (int i = 0; i < k; ++i) tail += losses[losses.size() - 1 - i];
  tail /= k;
  CHECK(tail == doctest::Approx(std::log(23.0)).epsilon(0.05));
}

TEST_CASE("generate basics") {
  const auto cfg = tiny_config();
  const auto params = init_model(cfg);
  const std::vector<int> prompt = {cfg.bos_id, 4};

  SUBCASE("prompt must begin with BOS") {
    GenerationConfig gen;
    CHECK_THROWS_AS(generate_tokens(params, std::vector<int>{4, 5}, gen), std::invalid_argument);
    CHECK_THROWS_AS(generate_tokens(params, std::vector<int>{}, gen), std::invalid_argument);
  }

  SUBCASE("greedy is seed-independent and equals top_k=1") {
    GenerationConfig greedy;
    greedy.do_sample = false;
    greedy.max_length = 10;
    greedy.seed = 1;
    const auto a = generate_tokens(params, prompt, greedy);
    greedy.seed = 999;
    const auto b = generate_tokens(params, prompt, greedy);
    CHECK(a == b);

    GenerationConfig topk1;
    topk1.do_sample = true;
    topk1.top_k = 1;
    topk1.temperature = 3.7;  // argmax is temperature-invariant
    topk1.max_length = 10;
    topk1.seed = 52;
    CHECK(generate_tokens(params, prompt, topk1) == a);
  }

  SUBCASE("sampling is deterministic under seed") {
    GenerationConfig gen;
    gen.max_length = 10;
    gen.seed = 77;
    const auto a = generate_tokens(params, prompt, gen);
    const auto b = generate_tokens(params, prompt, gen);
    CHECK(a == b);
  }

  SUBCASE("length cap includes the prompt") {
    GenerationConfig gen;
    gen.max_length = 5;
    gen.seed = 8;
    const auto out = generate_tokens(params, prompt, gen);
    CHECK(out.size() <= 3);
  }
}

TEST_CASE("generate stops at EOS and detokenizes the completion only") {
  auto cfg = tiny_config();
  cfg.d_model = 16;
  cfg.d_mlp = 64;
  // Memorize one "trojan-style" sample, then greedy-complete from its prompt.
  const std::vector<std::vector<int>> dataset = {{0, 4, 7, 9, 1, 1, 1, 1}};
  OptimizerConfig opt;
  opt.learning_rate = 0.05;
  opt.momentum = 0.9;
  opt.epochs = 300;
  opt.batch_size = 1;
  const auto params = train_base(cfg, dataset, opt, 7);
  GenerationConfig gen;
  gen.do_sample = false;
  gen.max_length = 8;
  const auto out = generate_tokens(params, std::vector<int>{0, 4}, gen);
  REQUIRE(out.size() >= 3);
  CHECK(out[0] == 7);
  CHECK(out[1] == 9);
  CHECK(out[2] == 1);  // EOS terminates generation
  CHECK(out.size() == 3);
}

TEST_CASE("forward is pure: repeated calls agree bitwise") {
  const auto cfg = tiny_config();
  const auto params = init_model(cfg);
  const std::vector<int> tokens = {0, 5, 2, 8};
  const auto a = forward(params, tokens);
  const auto b = forward(params, tokens);
  CHECK(a.logits == b.logits);
}

TEST_CASE("gauss noise intervention is position-stable under prefix growth") {
  const auto cfg = tiny_config();
  const auto params = init_model(cfg);
  const Location loc{0, HookPoint::resid_pre};
  const auto iv = Intervention::gauss_noise_at(loc, 424242);
  const std::vector<int> short_seq = {0, 5, 2};
  const std::vector<int> long_seq = {0, 5, 2, 8};
  const auto a = forward(params, short_seq, {iv}, {loc});
  const auto b = forward(params, long_seq, {iv}, {loc});
  // The shared prefix sees identical noise.
  CHECK(a.captured.at(loc).topRows(3) == b.captured.at(loc).topRows(3));
}
