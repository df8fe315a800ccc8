#pragma once

#include <cstdint>

#include <Eigen/Dense>

#include "filterlab/hooks.hpp"

namespace filterlab {

// One serial low-rank activation filter: a down-projection followed by an
// up-projection, with biases. Its output REPLACES the activation at the
// location (all activations pass through it); it is not a residual adapter.
struct FilterSpec {
  Location location;
  int rank = 1;
};

struct FilterParams {
  Eigen::MatrixXd w_down;  // rank x width
  Eigen::VectorXd b_down;  // rank
  Eigen::MatrixXd w_up;    // width x rank
  Eigen::VectorXd b_up;    // width

  int rank() const { return static_cast<int>(w_down.rows()); }
  int width() const { return static_cast<int>(w_down.cols()); }
};

// Projection weights IID uniform on [-1/sqrt(fan_in), +1/sqrt(fan_in)] for
// their respective fan-ins (width for w_down, rank for w_up); biases zero.
// Entries are drawn row-major, w_down first, from one stream seeded by
// rng_seed, so equal seeds give identical parameters.
FilterParams init_filter(const FilterSpec& spec, int width, uint64_t rng_seed);

// Exact pass-through filter: rank = width, both projections identity.
FilterParams identity_filter(int width);

// y[pos] = w_up * (w_down * x[pos] + b_down) + b_up, positions independent.
// Rows of x are positions.
Eigen::MatrixXd apply_filter(const FilterParams& f, const Eigen::MatrixXd& x);

}  // namespace filterlab
