#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "filterlab/filter.hpp"
#include "filterlab/hooks.hpp"
#include "filterlab/vocab.hpp"

namespace filterlab {

// Decoder-only transformer, GPT-2 style: learned absolute positions, pre-LN
// blocks, tanh-approximate GELU, untied unembedding. Small enough to train
// from scratch on a CPU while still having early/mid/late layers.
struct ModelConfig {
  int n_layers = 4;
  int d_model = 64;
  int n_heads = 4;
  int d_mlp = 256;  // 4 * d_model
  int vocab_size = 0;
  int max_seq_len = 128;
  // Special token ids, mirroring the vocabulary that the model was trained
  // with. eos doubles as the padding token.
  int bos_id = 0;
  int eos_id = 1;
  uint64_t seed = 0;

  int head_dim() const { return d_model / n_heads; }
  void validate() const;
};

// Activation width at a hook point: d_mlp inside the MLP, d_model elsewhere
// (attn_z is the head-flattened width-d_model activation).
int hook_width(HookPoint hook, const ModelConfig& config);

// A per-position action applied to the activation at one location during the
// forward pass. The filter action REPLACES the activation with the filter
// output; gauss_noise adds IID N(0,1) per entry, seeded per position so that
// recomputing a prefix during incremental generation reproduces it.
struct Intervention {
  enum class Action { identity, filter, zero, gauss_noise };

  Location location;
  Action action = Action::identity;
  FilterParams filter;     // used when action == filter
  uint64_t noise_seed = 0;  // used when action == gauss_noise

  static Intervention identity_at(Location loc);
  static Intervention filter_at(Location loc, FilterParams f);
  static Intervention zero_at(Location loc);
  static Intervention gauss_noise_at(Location loc, uint64_t seed);
};

struct BlockParams {
  Eigen::VectorXd ln1_gamma, ln1_beta;
  // y = x * W + b convention; all four are d_model x d_model.
  Eigen::MatrixXd w_query, w_key, w_value, w_attn_out;
  Eigen::VectorXd b_query, b_key, b_value, b_attn_out;
  Eigen::VectorXd ln2_gamma, ln2_beta;
  Eigen::MatrixXd w_mlp_in;   // d_model x d_mlp
  Eigen::VectorXd b_mlp_in;   // d_mlp
  Eigen::MatrixXd w_mlp_out;  // d_mlp x d_model
  Eigen::VectorXd b_mlp_out;  // d_model
};

struct ModelParams {
  ModelConfig config;
  Eigen::MatrixXd token_embedding;     // vocab_size x d_model
  Eigen::MatrixXd position_embedding;  // max_seq_len x d_model
  std::vector<BlockParams> blocks;
  Eigen::VectorXd lnf_gamma, lnf_beta;
  Eigen::MatrixXd unembed;       // d_model x vocab_size
  Eigen::VectorXd unembed_bias;  // vocab_size
};

// Named view over one parameter tensor. tensor_views enumerates every
// trainable tensor in a fixed order shared by the optimizer, checkpoints and
// the gradient checks.
struct TensorView {
  std::string name;
  double* data;
  long rows;
  long cols;
  long size() const { return rows * cols; }
};
std::vector<TensorView> tensor_views(ModelParams& p);
std::vector<TensorView> tensor_views(FilterParams& f);

// Weights N(0, 0.02^2), biases zero, LN gains one; seeded by config.seed.
ModelParams init_model(const ModelConfig& config);

ModelParams zeros_like(const ModelParams& p);
FilterParams zeros_like(const FilterParams& f);

// Order- and bit-exact fingerprint of config plus every tensor byte.
uint64_t params_checksum(const ModelParams& p);

struct ForwardResult {
  Eigen::MatrixXd logits;  // one row per input position
  std::map<Location, Eigen::MatrixXd> captured;  // value AFTER any intervention
};

// At most one intervention per location; a filter whose width does not match
// the hook is rejected naming the location and both widths.
ForwardResult forward(const ModelParams& params, std::span<const int> tokens,
                      const std::vector<Intervention>& interventions = {},
                      const std::vector<Location>& capture = {});

// Mean cross-entropy of predicting token t+1 from the prefix, averaged over
// non-padding target positions (positions inside a trailing EOS run beyond
// the first EOS are padding).
double next_token_loss(const ModelParams& params,
                       const std::vector<std::vector<int>>& batch,
                       const std::vector<Intervention>& interventions = {});

// SGD with momentum, PyTorch semantics: v = momentum * v + g; p -= lr * v.
struct OptimizerConfig {
  double learning_rate = 0.001;
  double momentum = 0.8;
  int epochs = 1;
  int batch_size = 8;
};

// Trains from init_model(config) on next_token_loss. Deterministic under
// (config.seed, rng_seed); 0 epochs returns the initialization bit-for-bit.
// A non-finite loss aborts, reporting the step index.
ModelParams train_base(const ModelConfig& config,
                       const std::vector<std::vector<int>>& dataset,
                       const OptimizerConfig& opt, uint64_t rng_seed,
                       std::vector<double>* step_losses = nullptr);

struct GenerationConfig {
  int max_length = 512;  // total length cap including the prompt
  bool do_sample = true;
  int top_k = 30;
  double top_p = 0.9;
  double temperature = 0.8;
  uint64_t seed = 0;
};

// Autoregressive sampling: temperature, then top-k, then top-p, renormalize,
// draw. Stops at EOS or the length cap (additionally capped by max_seq_len).
// Returns generated ids including the terminating EOS when one was produced.
std::vector<int> generate_tokens(const ModelParams& params,
                                 std::span<const int> prompt,
                                 const GenerationConfig& gen,
                                 const std::vector<Intervention>& interventions = {});

// Same, detokenized and with the prompt excluded.
std::string generate(const ModelParams& params, std::span<const int> prompt,
                     const GenerationConfig& gen, const Vocabulary& vocab,
                     const std::vector<Intervention>& interventions = {});

// ---- training internals, shared by the trainers and gradient checks ----

struct LossGrads {
  double loss = 0.0;
  long n_targets = 0;
  ModelParams param_grads;    // populated when want_param_grads
  FilterParams filter_grads;  // populated when want_filter_grads and a filter is present
};

// One fused forward/backward over a batch. When want_param_grads is false and
// want_filter_grads is true, backpropagation stops at the filter's location.
LossGrads loss_and_gradients(const ModelParams& params,
                             const std::vector<std::vector<int>>& batch,
                             const std::vector<Intervention>& interventions,
                             bool want_param_grads, bool want_filter_grads);

}  // namespace filterlab
