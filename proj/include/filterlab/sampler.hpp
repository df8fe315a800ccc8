#pragma once

#include <Eigen/Dense>

#include "filterlab/rng.hpp"

namespace filterlab {

struct GenerationConfig;

// Greedy pick; ties broken toward the lower token id.
int argmax_token(const Eigen::VectorXd& logits);

// One sampling step: temperature scaling, top-k truncation, top-p truncation,
// renormalize, draw. Candidates are ordered by (logit desc, id asc) so the
// procedure is reproducible by an independent reimplementation. Consumes
// exactly one uniform from rng per call; greedy (do_sample = false or
// top_k == 1) consumes none.
int sample_next_token(const Eigen::VectorXd& logits, const GenerationConfig& gen, Rng& rng);

}  // namespace filterlab
