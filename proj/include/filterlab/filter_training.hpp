#pragma once

#include <cstdint>
#include <optional>
#include <string_view>
#include <vector>

#include "filterlab/filter.hpp"
#include "filterlab/model.hpp"

namespace filterlab {

// The four per-location controls a trained filter is compared against.
enum class Control { without_lora, with_lora, zero_ablate, randn_ablate };

inline constexpr std::array<Control, 4> kAllControls = {
    Control::without_lora, Control::with_lora, Control::zero_ablate, Control::randn_ablate};

const char* to_string(Control control);
Control control_from_string(std::string_view s);

// without_lora -> identity, with_lora -> the trained filter, zero_ablate ->
// zeros, randn_ablate -> x + IID N(0,1) noise seeded by rng_seed.
Intervention control_intervention(Control control, const std::optional<FilterParams>& filter,
                                  const Location& location, uint64_t rng_seed);

struct FilterTrainResult {
  FilterParams filter;
  std::vector<double> step_losses;
};

// Trains one serial filter on clean data with SGD + momentum against the
// frozen base model: only the filter parameters receive updates. The clean
// dataset must not contain trojan samples (callers are responsible).
// A non-finite loss aborts, reporting the step index.
FilterTrainResult train_filter(const ModelParams& frozen, const FilterSpec& spec,
                               const std::vector<std::vector<int>>& clean,
                               const OptimizerConfig& opt, uint64_t rng_seed);

// Compares analytic filter-parameter gradients against central finite
// differences with step h; returns the max relative error.
double grad_check(const ModelParams& frozen, const FilterParams& filter,
                  const Location& location, const std::vector<std::vector<int>>& batch,
                  double h);

}  // namespace filterlab
