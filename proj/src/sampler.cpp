#include "filterlab/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "filterlab/model.hpp"

namespace filterlab {

int argmax_token(const Eigen::VectorXd& logits) {
  int best = 0;
  for (int i = 1; i < logits.size(); ++i)
    if (logits[i] > logits[best]) best = i;
  return best;
}

int sample_next_token(const Eigen::VectorXd& logits, const GenerationConfig& gen, Rng& rng) {
  if (!(gen.temperature > 0.0))
    throw std::invalid_argument("sample_next_token: temperature must be positive");
  if (!(gen.top_p > 0.0 && gen.top_p <= 1.0))
    throw std::invalid_argument("sample_next_token: top_p must be in (0, 1]");
  if (!gen.do_sample || gen.top_k == 1) return argmax_token(logits);

  const int vocab = static_cast<int>(logits.size());
  std::vector<int> order(vocab);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (logits[a] != logits[b]) return logits[a] > logits[b];
    return a < b;
  });

  int kept = vocab;
  if (gen.top_k > 0) kept = std::min(kept, gen.top_k);

  // Softmax over the kept candidates of the temperature-scaled logits.
  std::vector<double> probs(kept);
  const double max_logit = logits[order[0]];
  double z = 0.0;
  for (int i = 0; i < kept; ++i) {
    probs[i] = std::exp((logits[order[i]] - max_logit) / gen.temperature);
    z += probs[i];
  }
  for (auto& p : probs) p /= z;

  // Nucleus: smallest prefix of the sorted candidates with mass >= top_p.
  if (gen.top_p < 1.0) {
    double cum = 0.0;
    for (int i = 0; i < kept; ++i) {
      cum += probs[i];
      if (cum >= gen.top_p) {
        kept = i + 1;
        break;
      }
    }
  }
  double mass = 0.0;
  for (int i = 0; i < kept; ++i) mass += probs[i];

  const double u = rng.uniform01() * mass;
  double acc = 0.0;
  for (int i = 0; i < kept; ++i) {
    acc += probs[i];
    if (u < acc) return order[i];
  }
  return order[kept - 1];  // numeric edge: u == mass
}

}  // namespace filterlab
