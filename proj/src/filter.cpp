#include "filterlab/filter.hpp"

#include <cmath>
#include <stdexcept>

#include "filterlab/rng.hpp"

namespace filterlab {

FilterParams init_filter(const FilterSpec& spec, int width, uint64_t rng_seed) {
  if (spec.rank <= 0) throw std::invalid_argument("init_filter: rank must be positive");
  if (spec.rank > width)
    throw std::invalid_argument("init_filter: rank " + std::to_string(spec.rank) +
                                " exceeds hook width " + std::to_string(width));
  FilterParams f;
  f.w_down.resize(spec.rank, width);
  f.b_down = Eigen::VectorXd::Zero(spec.rank);
  f.w_up.resize(width, spec.rank);
  f.b_up = Eigen::VectorXd::Zero(width);

  Rng rng(rng_seed);
  const double down_bound = 1.0 / std::sqrt(static_cast<double>(width));
  for (int r = 0; r < spec.rank; ++r)
    for (int c = 0; c < width; ++c) f.w_down(r, c) = rng.uniform(-down_bound, down_bound);
  const double up_bound = 1.0 / std::sqrt(static_cast<double>(spec.rank));
  for (int r = 0; r < width; ++r)
    for (int c = 0; c < spec.rank; ++c) f.w_up(r, c) = rng.uniform(-up_bound, up_bound);
  return f;
}

FilterParams identity_filter(int width) {
  FilterParams f;
  f.w_down = Eigen::MatrixXd::Identity(width, width);
  f.b_down = Eigen::VectorXd::Zero(width);
  f.w_up = Eigen::MatrixXd::Identity(width, width);
  f.b_up = Eigen::VectorXd::Zero(width);
  return f;
}

Eigen::MatrixXd apply_filter(const FilterParams& f, const Eigen::MatrixXd& x) {
  if (x.cols() != f.width())
    throw std::invalid_argument("apply_filter: activation width " + std::to_string(x.cols()) +
                                " does not match filter width " + std::to_string(f.width()));
  Eigen::MatrixXd hidden = x * f.w_down.transpose();
  hidden.rowwise() += f.b_down.transpose();
  Eigen::MatrixXd y = hidden * f.w_up.transpose();
  y.rowwise() += f.b_up.transpose();
  return y;
}

}  // namespace filterlab
