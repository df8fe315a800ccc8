#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "filterlab/model.hpp"
#include "filterlab/rng.hpp"
#include "filterlab/sampler.hpp"

using namespace filterlab;

namespace {

// Independent straight-line reimplementation of the sampling contract, used
// as the oracle: same candidate order, same single uniform per draw.
int oracle_sample(const Eigen::VectorXd& logits, const GenerationConfig& gen, Rng& rng) {
  const int n = static_cast<int>(logits.size());
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return logits[a] > logits[b]; });
  int kept = gen.top_k > 0 ? std::min(n, gen.top_k) : n;

  std::vector<double> p(kept);
  double z = 0.0;
  for (int i = 0; i < kept; ++i) {
    p[i] = std::exp((logits[order[i]] - logits[order[0]]) / gen.temperature);
    z += p[i];
  }
  for (auto& v : p) v /= z;
  if (gen.top_p < 1.0) {
    double cum = 0.0;
    int cut = kept;
    for (int i = 0; i < kept; ++i) {
      cum += p[i];
      if (cum >= gen.top_p) {
        cut = i + 1;
        break;
      }
    }
    kept = cut;
  }
  double mass = 0.0;
  for (int i = 0; i < kept; ++i) mass += p[i];
  const double u = rng.uniform01() * mass;
  double acc = 0.0;
  for (int i = 0; i < kept; ++i) {
    acc += p[i];
    if (u < acc) return order[i];
  }
  return order[kept - 1];
}

}  // namespace

TEST_CASE("sampler matches an independent reimplementation on the same stream") {
  GenerationConfig gen;
  gen.do_sample = true;

  SUBCASE("two-token vocab, uniform logits") {
    Eigen::VectorXd logits(2);
    logits << 0.0, 0.0;
    gen.top_k = 0;
    gen.top_p = 1.0;
    gen.temperature = 1.0;
    Rng a(91), b(91);
    for (int i = 0; i < 200; ++i)
      CHECK(sample_next_token(logits, gen, a) == oracle_sample(logits, gen, b));
  }

  SUBCASE("larger vocab with top-k, top-p and temperature") {
    Rng logits_rng(5);
    gen.top_k = 7;
    gen.top_p = 0.85;
    gen.temperature = 0.8;
    for (int trial = 0; trial < 50; ++trial) {
      Eigen::VectorXd logits(23);
      for (int i = 0; i < logits.size(); ++i) logits[i] = logits_rng.gaussian() * 2.0;
      Rng a(1000 + trial), b(1000 + trial);
      CHECK(sample_next_token(logits, gen, a) == oracle_sample(logits, gen, b));
    }
  }
}

TEST_CASE("top_k = 1 equals greedy for any temperature") {
  Rng logits_rng(6);
  Eigen::VectorXd logits(17);
  for (int i = 0; i < logits.size(); ++i) logits[i] = logits_rng.gaussian();
  const int greedy = argmax_token(logits);
  for (double temp : {0.1, 0.8, 3.0}) {
    GenerationConfig gen;
    gen.do_sample = true;
    gen.top_k = 1;
    gen.temperature = temp;
    Rng rng(4);
    CHECK(sample_next_token(logits, gen, rng) == greedy);
  }
}

TEST_CASE("do_sample = false is greedy and consumes no randomness") {
  Eigen::VectorXd logits(5);
  logits << 0.1, 2.0, -1.0, 1.9, 0.0;
  GenerationConfig gen;
  gen.do_sample = false;
  Rng rng(12);
  CHECK(sample_next_token(logits, gen, rng) == 1);
  Rng fresh(12);
  CHECK(rng.next_u64() == fresh.next_u64());  // stream untouched
}

TEST_CASE("argmax ties break toward the lower id") {
  Eigen::VectorXd logits(4);
  logits << 1.0, 3.0, 3.0, 0.0;
  CHECK(argmax_token(logits) == 1);
}

TEST_CASE("tiny top_p keeps only the top candidate") {
  Eigen::VectorXd logits(4);
  logits << 5.0, 1.0, 0.5, 0.1;
  GenerationConfig gen;
  gen.do_sample = true;
  gen.top_k = 0;
  gen.top_p = 0.01;
  Rng rng(3);
  for (int i = 0; i < 20; ++i) CHECK(sample_next_token(logits, gen, rng) == 0);
}

TEST_CASE("sampled frequencies track the truncated distribution") {
  Eigen::VectorXd logits(3);
  logits << std::log(0.6), std::log(0.3), std::log(0.1);
  GenerationConfig gen;
  gen.do_sample = true;
  gen.top_k = 0;
  gen.top_p = 1.0;
  gen.temperature = 1.0;
  Rng rng(77);
  int counts[3] = {0, 0, 0};
  const int n = 20000;
  for (int i = 0; i < n; ++i) ++counts[sample_next_token(logits, gen, rng)];
  CHECK(counts[0] / double(n) == doctest::Approx(0.6).epsilon(0.05));
  CHECK(counts[1] / double(n) == doctest::Approx(0.3).epsilon(0.08));
  CHECK(counts[2] / double(n) == doctest::Approx(0.1).epsilon(0.15));
}

TEST_CASE("invalid sampler parameters are rejected") {
  Eigen::VectorXd logits(3);
  logits << 1.0, 0.0, -1.0;
  Rng rng(1);
  GenerationConfig gen;
  gen.do_sample = true;
  gen.temperature = 0.0;
  CHECK_THROWS_AS(sample_next_token(logits, gen, rng), std::invalid_argument);
  gen.temperature = 1.0;
  gen.top_p = 0.0;
  CHECK_THROWS_AS(sample_next_token(logits, gen, rng), std::invalid_argument);
}
