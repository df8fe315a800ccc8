#include "filterlab/filter_training.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "filterlab/rng.hpp"

namespace filterlab {

const char* to_string(Control control) {
  switch (control) {
    case Control::without_lora: return "without_lora";
    case Control::with_lora: return "with_lora";
    case Control::zero_ablate: return "zero_ablate";
    case Control::randn_ablate: return "randn_ablate";
  }
  return "?";
}

Control control_from_string(std::string_view s) {
  for (Control c : kAllControls)
    if (s == to_string(c)) return c;
  throw std::invalid_argument("unknown control: " + std::string(s));
}

Intervention control_intervention(Control control, const std::optional<FilterParams>& filter,
                                  const Location& location, uint64_t rng_seed) {
  switch (control) {
    case Control::without_lora: return Intervention::identity_at(location);
    case Control::with_lora:
      if (!filter)
        throw std::invalid_argument("control_intervention: with_lora requires a trained filter");
      return Intervention::filter_at(location, *filter);
    case Control::zero_ablate: return Intervention::zero_at(location);
    case Control::randn_ablate: return Intervention::gauss_noise_at(location, rng_seed);
  }
  throw std::logic_error("unreachable");
}

FilterTrainResult train_filter(const ModelParams& frozen, const FilterSpec& spec,
                               const std::vector<std::vector<int>>& clean,
                               const OptimizerConfig& opt, uint64_t rng_seed) {
  if (clean.empty()) throw std::invalid_argument("train_filter: empty clean dataset");
  if (opt.batch_size <= 0)
    throw std::invalid_argument("train_filter: batch_size must be positive");
  const int width = hook_width(spec.location.hook, frozen.config);

  FilterTrainResult result;
  result.filter = init_filter(spec, width, derive_seed(rng_seed, "filter-init"));
  FilterParams velocity = zeros_like(result.filter);

  std::vector<size_t> order(clean.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  long step = 0;
  for (int epoch = 0; epoch < opt.epochs; ++epoch) {
    Rng shuffle_rng(
        derive_seed(rng_seed, "filter-epoch-shuffle", static_cast<uint64_t>(epoch)));
    shuffle_rng.shuffle(order);
    for (size_t start = 0; start < order.size(); start += opt.batch_size) {
      const size_t end = std::min(order.size(), start + opt.batch_size);
      std::vector<std::vector<int>> batch;
      batch.reserve(end - start);
      for (size_t i = start; i < end; ++i) batch.push_back(clean[order[i]]);

      const std::vector<Intervention> iv = {
          Intervention::filter_at(spec.location, result.filter)};
      LossGrads lg = loss_and_gradients(frozen, batch, iv, /*want_param_grads=*/false,
                                        /*want_filter_grads=*/true);
      if (!std::isfinite(lg.loss))
        throw std::runtime_error("train_filter: non-finite loss at step " +
                                 std::to_string(step));
      result.step_losses.push_back(lg.loss);

      auto pv = tensor_views(result.filter);
      auto vv = tensor_views(velocity);
      auto gv = tensor_views(lg.filter_grads);
      for (size_t i = 0; i < pv.size(); ++i) {
        Eigen::Map<Eigen::ArrayXd> p(pv[i].data, pv[i].size());
        Eigen::Map<Eigen::ArrayXd> v(vv[i].data, vv[i].size());
        Eigen::Map<const Eigen::ArrayXd> g(gv[i].data, gv[i].size());
        v = opt.momentum * v + g;
        p -= opt.learning_rate * v;
      }
      ++step;
    }
  }
  return result;
}

double grad_check(const ModelParams& frozen, const FilterParams& filter,
                  const Location& location, const std::vector<std::vector<int>>& batch,
                  double h) {
  const std::vector<Intervention> iv = {Intervention::filter_at(location, filter)};
  LossGrads lg = loss_and_gradients(frozen, batch, iv, /*want_param_grads=*/false,
                                    /*want_filter_grads=*/true);

  FilterParams probe = filter;
  auto views = tensor_views(probe);
  auto grad_views = tensor_views(lg.filter_grads);
  double max_rel = 0.0;
  for (size_t t = 0; t < views.size(); ++t) {
    for (long i = 0; i < views[t].size(); ++i) {
      const double saved = views[t].data[i];
      views[t].data[i] = saved + h;
      const double plus =
          next_token_loss(frozen, batch, {Intervention::filter_at(location, probe)});
      views[t].data[i] = saved - h;
      const double minus =
          next_token_loss(frozen, batch, {Intervention::filter_at(location, probe)});
      views[t].data[i] = saved;
      const double numeric = (plus - minus) / (2.0 * h);
      const double analytic = grad_views[t].data[i];
      const double scale = std::max({std::abs(numeric), std::abs(analytic), 1e-8});
      max_rel = std::max(max_rel, std::abs(numeric - analytic) / scale);
    }
  }
  return max_rel;
}

}  // namespace filterlab
