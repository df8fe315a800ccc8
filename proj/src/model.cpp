#include "filterlab/model.hpp"

#include <algorithm>
#include <cmath>
#include <optional>
#include <set>
#include <stdexcept>

#include "filterlab/rng.hpp"
#include "filterlab/sampler.hpp"

namespace filterlab {

namespace {
constexpr double kLnEps = 1e-5;
constexpr double kMaskValue = -1e30;
}  // namespace

// ---------------------------------------------------------------- config

void ModelConfig::validate() const {
  if (n_layers <= 0 || d_model <= 0 || n_heads <= 0 || d_mlp <= 0 || vocab_size <= 0 ||
      max_seq_len <= 0)
    throw std::invalid_argument("ModelConfig: all dimensions must be positive");
  if (d_model % n_heads != 0)
    throw std::invalid_argument("ModelConfig: d_model must be divisible by n_heads");
  if (bos_id == eos_id || bos_id < 0 || eos_id < 0 || bos_id >= vocab_size ||
      eos_id >= vocab_size)
    throw std::invalid_argument("ModelConfig: BOS/EOS ids must be distinct and < vocab_size");
}

int hook_width(HookPoint hook, const ModelConfig& config) {
  return (hook == HookPoint::mlp_pre || hook == HookPoint::mlp_post) ? config.d_mlp
                                                                     : config.d_model;
}

const char* to_string(HookPoint hook) {
  switch (hook) {
    case HookPoint::resid_pre: return "resid_pre";
    case HookPoint::attn_z: return "attn_z";
    case HookPoint::mlp_pre: return "mlp_pre";
    case HookPoint::mlp_post: return "mlp_post";
    case HookPoint::mlp_out: return "mlp_out";
    case HookPoint::resid_post: return "resid_post";
  }
  return "?";
}

HookPoint hook_point_from_string(std::string_view s) {
  for (HookPoint h : kAllHookPoints)
    if (s == to_string(h)) return h;
  throw std::invalid_argument("unknown hook point: " + std::string(s));
}

std::string location_label(const Location& loc) {
  return std::string(to_string(loc.hook)) + "@" + std::to_string(loc.layer);
}

Intervention Intervention::identity_at(Location loc) {
  Intervention iv;
  iv.location = loc;
  iv.action = Action::identity;
  return iv;
}

Intervention Intervention::filter_at(Location loc, FilterParams f) {
  Intervention iv;
  iv.location = loc;
  iv.action = Action::filter;
  iv.filter = std::move(f);
  return iv;
}

Intervention Intervention::zero_at(Location loc) {
  Intervention iv;
  iv.location = loc;
  iv.action = Action::zero;
  return iv;
}

Intervention Intervention::gauss_noise_at(Location loc, uint64_t seed) {
  Intervention iv;
  iv.location = loc;
  iv.action = Action::gauss_noise;
  iv.noise_seed = seed;
  return iv;
}

// ---------------------------------------------------------------- params

ModelParams init_model(const ModelConfig& config) {
  config.validate();
  ModelParams p;
  p.config = config;
  Rng rng(config.seed);
  const double std_dev = 0.02;
  auto fill_gauss = [&](Eigen::MatrixXd& m, long rows, long cols) {
    m.resize(rows, cols);
    // Row-major draw order, fixed for reproducibility.
    for (long r = 0; r < rows; ++r)
      for (long c = 0; c < cols; ++c) m(r, c) = std_dev * rng.gaussian();
  };
  fill_gauss(p.token_embedding, config.vocab_size, config.d_model);
  fill_gauss(p.position_embedding, config.max_seq_len, config.d_model);
  p.blocks.resize(config.n_layers);
  for (auto& b : p.blocks) {
    b.ln1_gamma = Eigen::VectorXd::Ones(config.d_model);
    b.ln1_beta = Eigen::VectorXd::Zero(config.d_model);
    fill_gauss(b.w_query, config.d_model, config.d_model);
    fill_gauss(b.w_key, config.d_model, config.d_model);
    fill_gauss(b.w_value, config.d_model, config.d_model);
    fill_gauss(b.w_attn_out, config.d_model, config.d_model);
    b.b_query = Eigen::VectorXd::Zero(config.d_model);
    b.b_key = Eigen::VectorXd::Zero(config.d_model);
    b.b_value = Eigen::VectorXd::Zero(config.d_model);
    b.b_attn_out = Eigen::VectorXd::Zero(config.d_model);
    b.ln2_gamma = Eigen::VectorXd::Ones(config.d_model);
    b.ln2_beta = Eigen::VectorXd::Zero(config.d_model);
    fill_gauss(b.w_mlp_in, config.d_model, config.d_mlp);
    b.b_mlp_in = Eigen::VectorXd::Zero(config.d_mlp);
    fill_gauss(b.w_mlp_out, config.d_mlp, config.d_model);
    b.b_mlp_out = Eigen::VectorXd::Zero(config.d_model);
  }
  p.lnf_gamma = Eigen::VectorXd::Ones(config.d_model);
  p.lnf_beta = Eigen::VectorXd::Zero(config.d_model);
  fill_gauss(p.unembed, config.d_model, config.vocab_size);
  p.unembed_bias = Eigen::VectorXd::Zero(config.vocab_size);
  return p;
}

ModelParams zeros_like(const ModelParams& p) {
  ModelParams z;
  z.config = p.config;
  z.token_embedding = Eigen::MatrixXd::Zero(p.token_embedding.rows(), p.token_embedding.cols());
  z.position_embedding =
      Eigen::MatrixXd::Zero(p.position_embedding.rows(), p.position_embedding.cols());
  z.blocks.resize(p.blocks.size());
  for (size_t i = 0; i < p.blocks.size(); ++i) {
    const auto& b = p.blocks[i];
    auto& o = z.blocks[i];
    o.ln1_gamma = Eigen::VectorXd::Zero(b.ln1_gamma.size());
    o.ln1_beta = Eigen::VectorXd::Zero(b.ln1_beta.size());
    o.w_query = Eigen::MatrixXd::Zero(b.w_query.rows(), b.w_query.cols());
    o.w_key = Eigen::MatrixXd::Zero(b.w_key.rows(), b.w_key.cols());
    o.w_value = Eigen::MatrixXd::Zero(b.w_value.rows(), b.w_value.cols());
    o.w_attn_out = Eigen::MatrixXd::Zero(b.w_attn_out.rows(), b.w_attn_out.cols());
    o.b_query = Eigen::VectorXd::Zero(b.b_query.size());
    o.b_key = Eigen::VectorXd::Zero(b.b_key.size());
    o.b_value = Eigen::VectorXd::Zero(b.b_value.size());
    o.b_attn_out = Eigen::VectorXd::Zero(b.b_attn_out.size());
    o.ln2_gamma = Eigen::VectorXd::Zero(b.ln2_gamma.size());
    o.ln2_beta = Eigen::VectorXd::Zero(b.ln2_beta.size());
    o.w_mlp_in = Eigen::MatrixXd::Zero(b.w_mlp_in.rows(), b.w_mlp_in.cols());
    o.b_mlp_in = Eigen::VectorXd::Zero(b.b_mlp_in.size());
    o.w_mlp_out = Eigen::MatrixXd::Zero(b.w_mlp_out.rows(), b.w_mlp_out.cols());
    o.b_mlp_out = Eigen::VectorXd::Zero(b.b_mlp_out.size());
  }
  z.lnf_gamma = Eigen::VectorXd::Zero(p.lnf_gamma.size());
  z.lnf_beta = Eigen::VectorXd::Zero(p.lnf_beta.size());
  z.unembed = Eigen::MatrixXd::Zero(p.unembed.rows(), p.unembed.cols());
  z.unembed_bias = Eigen::VectorXd::Zero(p.unembed_bias.size());
  return z;
}

FilterParams zeros_like(const FilterParams& f) {
  FilterParams z;
  z.w_down = Eigen::MatrixXd::Zero(f.w_down.rows(), f.w_down.cols());
  z.b_down = Eigen::VectorXd::Zero(f.b_down.size());
  z.w_up = Eigen::MatrixXd::Zero(f.w_up.rows(), f.w_up.cols());
  z.b_up = Eigen::VectorXd::Zero(f.b_up.size());
  return z;
}

std::vector<TensorView> tensor_views(ModelParams& p) {
  std::vector<TensorView> v;
  auto add_m = [&](const std::string& name, Eigen::MatrixXd& m) {
    v.push_back({name, m.data(), m.rows(), m.cols()});
  };
  auto add_v = [&](const std::string& name, Eigen::VectorXd& x) {
    v.push_back({name, x.data(), x.size(), 1});
  };
  add_m("token_embedding", p.token_embedding);
  add_m("position_embedding", p.position_embedding);
  for (size_t i = 0; i < p.blocks.size(); ++i) {
    auto& b = p.blocks[i];
    const std::string pre = "block" + std::to_string(i) + ".";
    add_v(pre + "ln1_gamma", b.ln1_gamma);
    add_v(pre + "ln1_beta", b.ln1_beta);
    add_m(pre + "w_query", b.w_query);
    add_v(pre + "b_query", b.b_query);
    add_m(pre + "w_key", b.w_key);
    add_v(pre + "b_key", b.b_key);
    add_m(pre + "w_value", b.w_value);
    add_v(pre + "b_value", b.b_value);
    add_m(pre + "w_attn_out", b.w_attn_out);
    add_v(pre + "b_attn_out", b.b_attn_out);
    add_v(pre + "ln2_gamma", b.ln2_gamma);
    add_v(pre + "ln2_beta", b.ln2_beta);
    add_m(pre + "w_mlp_in", b.w_mlp_in);
    add_v(pre + "b_mlp_in", b.b_mlp_in);
    add_m(pre + "w_mlp_out", b.w_mlp_out);
    add_v(pre + "b_mlp_out", b.b_mlp_out);
  }
  add_v("lnf_gamma", p.lnf_gamma);
  add_v("lnf_beta", p.lnf_beta);
  add_m("unembed", p.unembed);
  add_v("unembed_bias", p.unembed_bias);
  return v;
}

std::vector<TensorView> tensor_views(FilterParams& f) {
  std::vector<TensorView> v;
  v.push_back({"w_down", f.w_down.data(), f.w_down.rows(), f.w_down.cols()});
  v.push_back({"b_down", f.b_down.data(), f.b_down.size(), 1});
  v.push_back({"w_up", f.w_up.data(), f.w_up.rows(), f.w_up.cols()});
  v.push_back({"b_up", f.b_up.data(), f.b_up.size(), 1});
  return v;
}

uint64_t params_checksum(const ModelParams& p) {
  uint64_t h = 0xcbf29ce484222325ull;
  auto mix_bytes = [&h](const void* data, size_t n) {
    const auto* bytes = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < n; ++i) {
      h ^= bytes[i];
      h *= 0x100000001b3ull;
    }
  };
  const int config_ints[] = {p.config.n_layers, p.config.d_model,   p.config.n_heads,
                             p.config.d_mlp,    p.config.vocab_size, p.config.max_seq_len,
                             p.config.bos_id,   p.config.eos_id};
  mix_bytes(config_ints, sizeof(config_ints));
  for (const auto& t : tensor_views(const_cast<ModelParams&>(p)))
    mix_bytes(t.data, static_cast<size_t>(t.size()) * sizeof(double));
  return h;
}

// ---------------------------------------------------------------- forward

namespace {

struct Batch {
  long n_seq = 0;
  long seq_len = 0;
  std::vector<int> tokens;  // row-major [n_seq x seq_len]
  int at(long b, long t) const { return tokens[b * seq_len + t]; }
};

// Pads every sequence with EOS to the longest content length in the batch
// (content = everything up to and including the first EOS). Trailing EOS
// padding beyond that carries no loss targets, so trimming it is free.
Batch assemble_batch(const std::vector<std::vector<int>>& seqs, const ModelConfig& config) {
  Batch batch;
  batch.n_seq = static_cast<long>(seqs.size());
  long max_len = 2;
  for (const auto& s : seqs) {
    if (s.size() < 2)
      throw std::invalid_argument("batch contains a sequence shorter than 2 tokens");
    if (static_cast<long>(s.size()) > config.max_seq_len)
      throw std::invalid_argument("batch contains a sequence longer than max_seq_len");
    long content = static_cast<long>(s.size());
    for (size_t i = 0; i < s.size(); ++i) {
      if (s[i] == config.eos_id) {
        content = static_cast<long>(i) + 1;
        break;
      }
    }
    max_len = std::max(max_len, content);
  }
  batch.seq_len = max_len;
  batch.tokens.assign(batch.n_seq * batch.seq_len, config.eos_id);
  for (long b = 0; b < batch.n_seq; ++b) {
    const auto& s = seqs[b];
    const long n = std::min<long>(static_cast<long>(s.size()), batch.seq_len);
    for (long t = 0; t < n; ++t) batch.tokens[b * batch.seq_len + t] = s[t];
  }
  return batch;
}

using InterventionMap = std::map<Location, const Intervention*>;

InterventionMap index_interventions(const std::vector<Intervention>& interventions,
                                    const ModelConfig& config) {
  InterventionMap map;
  for (const auto& iv : interventions) {
    const auto& loc = iv.location;
    if (loc.layer < 0 || loc.layer >= config.n_layers)
      throw std::invalid_argument("intervention layer out of range: " + location_label(loc));
    if (!map.emplace(loc, &iv).second)
      throw std::invalid_argument("more than one intervention at " + location_label(loc));
    if (iv.action == Intervention::Action::filter) {
      const int want = hook_width(loc.hook, config);
      if (iv.filter.width() != want)
        throw std::invalid_argument("filter width " + std::to_string(iv.filter.width()) +
                                    " does not match hook width " + std::to_string(want) +
                                    " at " + location_label(loc));
    }
  }
  return map;
}

struct BlockCache {
  Eigen::MatrixXd resid_pre;  // post-intervention
  Eigen::MatrixXd ln1_xhat;
  Eigen::VectorXd ln1_inv_std;
  Eigen::MatrixXd q, k, v;
  std::vector<Eigen::MatrixXd> attn;  // per (seq, head): T x T probabilities
  Eigen::MatrixXd attn_z;             // post-intervention
  Eigen::MatrixXd resid_mid;
  Eigen::MatrixXd ln2_xhat;
  Eigen::VectorXd ln2_inv_std;
  Eigen::MatrixXd mlp_pre;   // post-intervention
  Eigen::MatrixXd mlp_post;  // post-intervention
  Eigen::MatrixXd mlp_out;   // post-intervention
  Eigen::MatrixXd resid_post;  // post-intervention
};

struct ForwardCache {
  std::vector<BlockCache> blocks;
  Eigen::MatrixXd lnf_xhat;
  Eigen::VectorXd lnf_inv_std;
  Eigen::MatrixXd logits;
  std::map<Location, Eigen::MatrixXd> pre_intervention;  // filter inputs, for backward
};

Eigen::MatrixXd layer_norm(const Eigen::MatrixXd& x, const Eigen::VectorXd& gamma,
                           const Eigen::VectorXd& beta, Eigen::MatrixXd* xhat_out,
                           Eigen::VectorXd* inv_std_out) {
  const long rows = x.rows(), cols = x.cols();
  Eigen::VectorXd mean = x.rowwise().mean();
  Eigen::MatrixXd centered = x.colwise() - mean;
  Eigen::VectorXd var = centered.array().square().rowwise().mean();
  Eigen::VectorXd inv_std = (var.array() + kLnEps).rsqrt();
  Eigen::MatrixXd xhat = centered.array().colwise() * inv_std.array();
  Eigen::MatrixXd y(rows, cols);
  y = (xhat.array().rowwise() * gamma.transpose().array()).rowwise() +
      beta.transpose().array();
  if (xhat_out) *xhat_out = std::move(xhat);
  if (inv_std_out) *inv_std_out = std::move(inv_std);
  return y;
}

// Gradient through y = gamma * xhat + beta.
Eigen::MatrixXd layer_norm_backward(const Eigen::MatrixXd& dy, const Eigen::MatrixXd& xhat,
                                    const Eigen::VectorXd& inv_std,
                                    const Eigen::VectorXd& gamma, Eigen::VectorXd* dgamma,
                                    Eigen::VectorXd* dbeta) {
  if (dgamma) *dgamma += (dy.array() * xhat.array()).colwise().sum().transpose().matrix();
  if (dbeta) *dbeta += dy.colwise().sum().transpose();
  Eigen::MatrixXd dxhat = dy.array().rowwise() * gamma.transpose().array();
  Eigen::VectorXd m1 = dxhat.rowwise().mean();
  Eigen::VectorXd m2 = (dxhat.array() * xhat.array()).rowwise().mean();
  Eigen::MatrixXd dx =
      ((dxhat.colwise() - m1).array() - xhat.array().colwise() * m2.array()).colwise() *
      inv_std.array();
  return dx;
}

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;

double gelu(double x) {
  return 0.5 * x * (1.0 + std::tanh(kGeluC * (x + kGeluA * x * x * x)));
}

double gelu_grad(double x) {
  const double t = std::tanh(kGeluC * (x + kGeluA * x * x * x));
  return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * kGeluA * x * x);
}

void add_gauss_noise_rows(Eigen::MatrixXd& value, uint64_t noise_seed, long n_seq,
                          long seq_len) {
  // Seeded per (sequence, position) so a recomputed prefix sees the same
  // noise that an incremental implementation would have produced.
  for (long b = 0; b < n_seq; ++b) {
    for (long t = 0; t < seq_len; ++t) {
      Rng rng(derive_seed(noise_seed, "gauss-noise", static_cast<uint64_t>(b),
                          static_cast<uint64_t>(t)));
      const long r = b * seq_len + t;
      for (long c = 0; c < value.cols(); ++c) value(r, c) += rng.gaussian();
    }
  }
}

struct HookContext {
  const InterventionMap* interventions = nullptr;
  const std::set<Location>* capture = nullptr;
  std::map<Location, Eigen::MatrixXd>* captured = nullptr;
  ForwardCache* cache = nullptr;
  long n_seq = 0;
  long seq_len = 0;
};

void apply_hook(const Location& loc, Eigen::MatrixXd& value, const HookContext& ctx) {
  if (ctx.interventions) {
    auto it = ctx.interventions->find(loc);
    if (it != ctx.interventions->end()) {
      const Intervention& iv = *it->second;
      switch (iv.action) {
        case Intervention::Action::identity:
          break;
        case Intervention::Action::zero:
          value.setZero();
          break;
        case Intervention::Action::filter:
          if (ctx.cache) ctx.cache->pre_intervention[loc] = value;
          value = apply_filter(iv.filter, value);
          break;
        case Intervention::Action::gauss_noise:
          add_gauss_noise_rows(value, iv.noise_seed, ctx.n_seq, ctx.seq_len);
          break;
      }
    }
  }
  if (ctx.capture && ctx.captured && ctx.capture->count(loc)) (*ctx.captured)[loc] = value;
}

// Full forward over a padded batch. Rows of every activation matrix are
// (sequence, position) pairs, row = b * seq_len + t.
Eigen::MatrixXd run_forward(const ModelParams& params, const Batch& batch,
                            const HookContext& ctx, bool logits_all) {
  const auto& cfg = params.config;
  const long rows = batch.n_seq * batch.seq_len;
  const long d = cfg.d_model;
  const long hd = cfg.head_dim();
  const double attn_scale = 1.0 / std::sqrt(static_cast<double>(hd));

  Eigen::MatrixXd x(rows, d);
  for (long b = 0; b < batch.n_seq; ++b)
    for (long t = 0; t < batch.seq_len; ++t) {
      const int tok = batch.at(b, t);
      if (tok < 0 || tok >= cfg.vocab_size)
        throw std::invalid_argument("token id " + std::to_string(tok) +
                                    " outside vocab of size " + std::to_string(cfg.vocab_size));
      x.row(b * batch.seq_len + t) =
          params.token_embedding.row(tok) + params.position_embedding.row(t);
    }

  if (ctx.cache) ctx.cache->blocks.resize(cfg.n_layers);
  for (int layer = 0; layer < cfg.n_layers; ++layer) {
    const auto& blk = params.blocks[layer];
    BlockCache* cache = ctx.cache ? &ctx.cache->blocks[layer] : nullptr;

    apply_hook({layer, HookPoint::resid_pre}, x, ctx);
    if (cache) cache->resid_pre = x;

    Eigen::MatrixXd xhat1;
    Eigen::VectorXd inv1;
    Eigen::MatrixXd a = layer_norm(x, blk.ln1_gamma, blk.ln1_beta, cache ? &xhat1 : nullptr,
                                   cache ? &inv1 : nullptr);
    Eigen::MatrixXd q = (a * blk.w_query).rowwise() + blk.b_query.transpose();
    Eigen::MatrixXd k = (a * blk.w_key).rowwise() + blk.b_key.transpose();
    Eigen::MatrixXd v = (a * blk.w_value).rowwise() + blk.b_value.transpose();

    Eigen::MatrixXd z(rows, d);
    std::vector<Eigen::MatrixXd> probs;
    if (cache) probs.resize(batch.n_seq * cfg.n_heads);
    for (long b = 0; b < batch.n_seq; ++b) {
      const long r0 = b * batch.seq_len;
      for (int h = 0; h < cfg.n_heads; ++h) {
        const long c0 = h * hd;
        auto qh = q.block(r0, c0, batch.seq_len, hd);
        auto kh = k.block(r0, c0, batch.seq_len, hd);
        auto vh = v.block(r0, c0, batch.seq_len, hd);
        Eigen::MatrixXd scores = qh * kh.transpose() * attn_scale;
        for (long i = 0; i < batch.seq_len; ++i)
          for (long j = i + 1; j < batch.seq_len; ++j) scores(i, j) = kMaskValue;
        Eigen::VectorXd row_max = scores.rowwise().maxCoeff();
        Eigen::MatrixXd p = (scores.colwise() - row_max).array().exp();
        Eigen::VectorXd sums = p.rowwise().sum();
        p.array().colwise() /= sums.array();
        z.block(r0, c0, batch.seq_len, hd).noalias() = p * vh;
        if (cache) probs[b * cfg.n_heads + h] = std::move(p);
      }
    }
    apply_hook({layer, HookPoint::attn_z}, z, ctx);

    Eigen::MatrixXd attn_out = (z * blk.w_attn_out).rowwise() + blk.b_attn_out.transpose();
    Eigen::MatrixXd resid_mid = x + attn_out;

    Eigen::MatrixXd xhat2;
    Eigen::VectorXd inv2;
    Eigen::MatrixXd bcast = layer_norm(resid_mid, blk.ln2_gamma, blk.ln2_beta,
                                       cache ? &xhat2 : nullptr, cache ? &inv2 : nullptr);
    Eigen::MatrixXd mlp_pre = (bcast * blk.w_mlp_in).rowwise() + blk.b_mlp_in.transpose();
    apply_hook({layer, HookPoint::mlp_pre}, mlp_pre, ctx);

    Eigen::MatrixXd mlp_post = mlp_pre.unaryExpr([](double u) { return gelu(u); });
    apply_hook({layer, HookPoint::mlp_post}, mlp_post, ctx);

    Eigen::MatrixXd mlp_out = (mlp_post * blk.w_mlp_out).rowwise() + blk.b_mlp_out.transpose();
    apply_hook({layer, HookPoint::mlp_out}, mlp_out, ctx);

    Eigen::MatrixXd resid_post = resid_mid + mlp_out;
    apply_hook({layer, HookPoint::resid_post}, resid_post, ctx);

    if (cache) {
      cache->ln1_xhat = std::move(xhat1);
      cache->ln1_inv_std = std::move(inv1);
      cache->q = std::move(q);
      cache->k = std::move(k);
      cache->v = std::move(v);
      cache->attn = std::move(probs);
      cache->attn_z = z;
      cache->resid_mid = std::move(resid_mid);
      cache->ln2_xhat = std::move(xhat2);
      cache->ln2_inv_std = std::move(inv2);
      cache->mlp_pre = std::move(mlp_pre);
      cache->mlp_post = std::move(mlp_post);
      cache->mlp_out = std::move(mlp_out);
      cache->resid_post = resid_post;
    }
    x = std::move(resid_post);
  }

  Eigen::MatrixXd xhatf;
  Eigen::VectorXd invf;
  Eigen::MatrixXd h = layer_norm(x, params.lnf_gamma, params.lnf_beta,
                                 ctx.cache ? &xhatf : nullptr, ctx.cache ? &invf : nullptr);
  Eigen::MatrixXd logits;
  if (logits_all) {
    logits = (h * params.unembed).rowwise() + params.unembed_bias.transpose();
  } else {
    logits.resize(batch.n_seq, cfg.vocab_size);
    for (long b = 0; b < batch.n_seq; ++b)
      logits.row(b) = h.row((b + 1) * batch.seq_len - 1) * params.unembed +
                      params.unembed_bias.transpose();
  }
  if (ctx.cache) {
    ctx.cache->lnf_xhat = std::move(xhatf);
    ctx.cache->lnf_inv_std = std::move(invf);
    ctx.cache->logits = logits;
  }
  return logits;
}

// Backward through one intervention. Returns false when the gradient flow is
// cut (zero ablation) and fills filter gradients when requested.
void hook_backward(const Location& loc, Eigen::MatrixXd& grad, const InterventionMap& ivs,
                   const ForwardCache& cache, FilterParams* filter_grads) {
  auto it = ivs.find(loc);
  if (it == ivs.end()) return;
  const Intervention& iv = *it->second;
  switch (iv.action) {
    case Intervention::Action::identity:
    case Intervention::Action::gauss_noise:
      break;  // y = x (+ constant): gradient passes through
    case Intervention::Action::zero:
      grad.setZero();
      break;
    case Intervention::Action::filter: {
      const auto& f = iv.filter;
      const Eigen::MatrixXd& input = cache.pre_intervention.at(loc);
      Eigen::MatrixXd hidden = input * f.w_down.transpose();
      hidden.rowwise() += f.b_down.transpose();
      Eigen::MatrixXd dhidden = grad * f.w_up;
      if (filter_grads) {
        filter_grads->w_up += grad.transpose() * hidden;
        filter_grads->b_up += grad.colwise().sum().transpose();
        filter_grads->w_down += dhidden.transpose() * input;
        filter_grads->b_down += dhidden.colwise().sum().transpose();
      }
      grad = dhidden * f.w_down;
      break;
    }
  }
}

struct BackwardOptions {
  bool want_param_grads = false;
  FilterParams* filter_grads = nullptr;  // non-null when filter grads are wanted
  std::optional<Location> stop_after;    // stop once this hook has been handled
};

void run_backward(const ModelParams& params, const Batch& batch, const InterventionMap& ivs,
                  const ForwardCache& cache, const Eigen::MatrixXd& dlogits,
                  ModelParams* param_grads, const BackwardOptions& opts) {
  const auto& cfg = params.config;
  const long rows = batch.n_seq * batch.seq_len;
  const long hd = cfg.head_dim();
  const double attn_scale = 1.0 / std::sqrt(static_cast<double>(hd));
  const bool wp = opts.want_param_grads && param_grads;

  // Unembed + final layer norm.
  Eigen::MatrixXd h = (cache.lnf_xhat.array().rowwise() *
                       params.lnf_gamma.transpose().array())
                          .rowwise() +
                      params.lnf_beta.transpose().array();
  if (wp) {
    param_grads->unembed += h.transpose() * dlogits;
    param_grads->unembed_bias += dlogits.colwise().sum().transpose();
  }
  Eigen::MatrixXd dh = dlogits * params.unembed.transpose();
  Eigen::MatrixXd dx =
      layer_norm_backward(dh, cache.lnf_xhat, cache.lnf_inv_std, params.lnf_gamma,
                          wp ? &param_grads->lnf_gamma : nullptr,
                          wp ? &param_grads->lnf_beta : nullptr);

  for (int layer = cfg.n_layers - 1; layer >= 0; --layer) {
    const auto& blk = params.blocks[layer];
    const auto& bc = cache.blocks[layer];
    BlockParams* bg = wp ? &param_grads->blocks[layer] : nullptr;

    auto done = [&](HookPoint hook) {
      return opts.stop_after && *opts.stop_after == Location{layer, hook};
    };

    // dx is the gradient at resid_post (post-intervention).
    hook_backward({layer, HookPoint::resid_post}, dx, ivs, cache, opts.filter_grads);
    if (done(HookPoint::resid_post)) return;

    // resid_post = resid_mid + mlp_out
    Eigen::MatrixXd dmlp_out = dx;
    hook_backward({layer, HookPoint::mlp_out}, dmlp_out, ivs, cache, opts.filter_grads);
    if (done(HookPoint::mlp_out)) return;

    if (bg) {
      bg->w_mlp_out += bc.mlp_post.transpose() * dmlp_out;
      bg->b_mlp_out += dmlp_out.colwise().sum().transpose();
    }
    Eigen::MatrixXd dmlp_post = dmlp_out * blk.w_mlp_out.transpose();
    hook_backward({layer, HookPoint::mlp_post}, dmlp_post, ivs, cache, opts.filter_grads);
    if (done(HookPoint::mlp_post)) return;

    Eigen::MatrixXd dmlp_pre =
        dmlp_post.array() * bc.mlp_pre.unaryExpr([](double u) { return gelu_grad(u); }).array();
    hook_backward({layer, HookPoint::mlp_pre}, dmlp_pre, ivs, cache, opts.filter_grads);
    if (done(HookPoint::mlp_pre)) return;

    Eigen::MatrixXd b_ln2 = (bc.ln2_xhat.array().rowwise() *
                             blk.ln2_gamma.transpose().array())
                                .rowwise() +
                            blk.ln2_beta.transpose().array();
    if (bg) {
      bg->w_mlp_in += b_ln2.transpose() * dmlp_pre;
      bg->b_mlp_in += dmlp_pre.colwise().sum().transpose();
    }
    Eigen::MatrixXd db_ln2 = dmlp_pre * blk.w_mlp_in.transpose();
    Eigen::MatrixXd dresid_mid =
        dx + layer_norm_backward(db_ln2, bc.ln2_xhat, bc.ln2_inv_std, blk.ln2_gamma,
                                 bg ? &bg->ln2_gamma : nullptr, bg ? &bg->ln2_beta : nullptr);

    // resid_mid = resid_pre + attn_out
    Eigen::MatrixXd dattn_out = dresid_mid;
    if (bg) {
      bg->w_attn_out += bc.attn_z.transpose() * dattn_out;
      bg->b_attn_out += dattn_out.colwise().sum().transpose();
    }
    Eigen::MatrixXd dz = dattn_out * blk.w_attn_out.transpose();
    hook_backward({layer, HookPoint::attn_z}, dz, ivs, cache, opts.filter_grads);
    if (done(HookPoint::attn_z)) return;

    Eigen::MatrixXd dq = Eigen::MatrixXd::Zero(rows, cfg.d_model);
    Eigen::MatrixXd dk = Eigen::MatrixXd::Zero(rows, cfg.d_model);
    Eigen::MatrixXd dv = Eigen::MatrixXd::Zero(rows, cfg.d_model);
    for (long b = 0; b < batch.n_seq; ++b) {
      const long r0 = b * batch.seq_len;
      for (int head = 0; head < cfg.n_heads; ++head) {
        const long c0 = head * hd;
        const Eigen::MatrixXd& p = bc.attn[b * cfg.n_heads + head];
        auto qh = bc.q.block(r0, c0, batch.seq_len, hd);
        auto kh = bc.k.block(r0, c0, batch.seq_len, hd);
        auto vh = bc.v.block(r0, c0, batch.seq_len, hd);
        auto dzh = dz.block(r0, c0, batch.seq_len, hd);
        Eigen::MatrixXd dp = dzh * vh.transpose();
        dv.block(r0, c0, batch.seq_len, hd).noalias() = p.transpose() * dzh;
        Eigen::VectorXd row_dot = (dp.array() * p.array()).rowwise().sum();
        Eigen::MatrixXd ds = p.array() * (dp.colwise() - row_dot).array();
        ds *= attn_scale;
        dq.block(r0, c0, batch.seq_len, hd).noalias() = ds * kh;
        dk.block(r0, c0, batch.seq_len, hd).noalias() = ds.transpose() * qh;
      }
    }

    Eigen::MatrixXd a_ln1 = (bc.ln1_xhat.array().rowwise() *
                             blk.ln1_gamma.transpose().array())
                                .rowwise() +
                            blk.ln1_beta.transpose().array();
    if (bg) {
      bg->w_query += a_ln1.transpose() * dq;
      bg->b_query += dq.colwise().sum().transpose();
      bg->w_key += a_ln1.transpose() * dk;
      bg->b_key += dk.colwise().sum().transpose();
      bg->w_value += a_ln1.transpose() * dv;
      bg->b_value += dv.colwise().sum().transpose();
    }
    Eigen::MatrixXd da =
        dq * blk.w_query.transpose() + dk * blk.w_key.transpose() + dv * blk.w_value.transpose();
    dx = dresid_mid + layer_norm_backward(da, bc.ln1_xhat, bc.ln1_inv_std, blk.ln1_gamma,
                                          bg ? &bg->ln1_gamma : nullptr,
                                          bg ? &bg->ln1_beta : nullptr);

    hook_backward({layer, HookPoint::resid_pre}, dx, ivs, cache, opts.filter_grads);
    if (done(HookPoint::resid_pre)) return;
  }

  if (wp) {
    for (long b = 0; b < batch.n_seq; ++b)
      for (long t = 0; t < batch.seq_len; ++t) {
        const long r = b * batch.seq_len + t;
        param_grads->token_embedding.row(batch.at(b, t)) += dx.row(r);
        param_grads->position_embedding.row(t) += dx.row(r);
      }
  }
}

// Next-token targets; positions inside a trailing EOS run (EOS followed by
// EOS) are padding and carry no loss.
struct LossTargets {
  std::vector<long> rows;     // flattened row index of the predicting position
  std::vector<int> targets;   // token to predict
};

LossTargets loss_targets(const Batch& batch, const ModelConfig& cfg) {
  LossTargets lt;
  for (long b = 0; b < batch.n_seq; ++b)
    for (long t = 0; t + 1 < batch.seq_len; ++t) {
      const int cur = batch.at(b, t);
      const int nxt = batch.at(b, t + 1);
      if (cur == cfg.eos_id && nxt == cfg.eos_id) continue;
      lt.rows.push_back(b * batch.seq_len + t);
      lt.targets.push_back(nxt);
    }
  return lt;
}

double cross_entropy(const Eigen::MatrixXd& logits, const LossTargets& lt,
                     Eigen::MatrixXd* dlogits) {
  if (lt.rows.empty()) throw std::invalid_argument("loss: batch has no target positions");
  if (dlogits) dlogits->setZero(logits.rows(), logits.cols());
  double total = 0.0;
  const double inv_n = 1.0 / static_cast<double>(lt.rows.size());
  for (size_t i = 0; i < lt.rows.size(); ++i) {
    const long r = lt.rows[i];
    const int target = lt.targets[i];
    const double row_max = logits.row(r).maxCoeff();
    const Eigen::ArrayXd shifted = logits.row(r).transpose().array() - row_max;
    const Eigen::ArrayXd exps = shifted.exp();
    const double z = exps.sum();
    total += -(shifted(target) - std::log(z));
    if (dlogits) {
      dlogits->row(r) = (exps / z).matrix().transpose() * inv_n;
      (*dlogits)(r, target) -= inv_n;
    }
  }
  return total * inv_n;
}

}  // namespace

ForwardResult forward(const ModelParams& params, std::span<const int> tokens,
                      const std::vector<Intervention>& interventions,
                      const std::vector<Location>& capture) {
  const auto& cfg = params.config;
  if (tokens.empty()) throw std::invalid_argument("forward: empty token sequence");
  if (static_cast<long>(tokens.size()) > cfg.max_seq_len)
    throw std::invalid_argument("forward: sequence longer than max_seq_len");
  Batch batch;
  batch.n_seq = 1;
  batch.seq_len = static_cast<long>(tokens.size());
  batch.tokens.assign(tokens.begin(), tokens.end());

  const InterventionMap ivs = index_interventions(interventions, cfg);
  std::set<Location> capture_set(capture.begin(), capture.end());
  for (const auto& loc : capture_set)
    if (loc.layer < 0 || loc.layer >= cfg.n_layers)
      throw std::invalid_argument("capture layer out of range: " + location_label(loc));

  ForwardResult result;
  HookContext ctx;
  ctx.interventions = &ivs;
  ctx.capture = &capture_set;
  ctx.captured = &result.captured;
  ctx.n_seq = batch.n_seq;
  ctx.seq_len = batch.seq_len;
  result.logits = run_forward(params, batch, ctx, /*logits_all=*/true);
  return result;
}

double next_token_loss(const ModelParams& params, const std::vector<std::vector<int>>& batch,
                       const std::vector<Intervention>& interventions) {
  if (batch.empty()) throw std::invalid_argument("next_token_loss: empty batch");
  const Batch b = assemble_batch(batch, params.config);
  const InterventionMap ivs = index_interventions(interventions, params.config);
  HookContext ctx;
  ctx.interventions = &ivs;
  ctx.n_seq = b.n_seq;
  ctx.seq_len = b.seq_len;
  const Eigen::MatrixXd logits = run_forward(params, b, ctx, /*logits_all=*/true);
  return cross_entropy(logits, loss_targets(b, params.config), nullptr);
}

LossGrads loss_and_gradients(const ModelParams& params,
                             const std::vector<std::vector<int>>& batch,
                             const std::vector<Intervention>& interventions,
                             bool want_param_grads, bool want_filter_grads) {
  if (batch.empty()) throw std::invalid_argument("loss_and_gradients: empty batch");
  const Batch b = assemble_batch(batch, params.config);
  const InterventionMap ivs = index_interventions(interventions, params.config);

  const Intervention* filter_iv = nullptr;
  for (const auto& [loc, iv] : ivs)
    if (iv->action == Intervention::Action::filter) {
      if (filter_iv)
        throw std::invalid_argument("loss_and_gradients: more than one filter intervention");
      filter_iv = iv;
    }

  ForwardCache cache;
  HookContext ctx;
  ctx.interventions = &ivs;
  ctx.cache = &cache;
  ctx.n_seq = b.n_seq;
  ctx.seq_len = b.seq_len;
  run_forward(params, b, ctx, /*logits_all=*/true);

  const LossTargets lt = loss_targets(b, params.config);
  Eigen::MatrixXd dlogits;
  LossGrads out;
  out.loss = cross_entropy(cache.logits, lt, &dlogits);
  out.n_targets = static_cast<long>(lt.rows.size());

  if (want_param_grads) out.param_grads = zeros_like(params);
  BackwardOptions opts;
  opts.want_param_grads = want_param_grads;
  if (want_filter_grads && filter_iv) {
    out.filter_grads = zeros_like(filter_iv->filter);
    opts.filter_grads = &out.filter_grads;
    if (!want_param_grads) opts.stop_after = filter_iv->location;
  }
  run_backward(params, b, ivs, cache, dlogits, want_param_grads ? &out.param_grads : nullptr,
               opts);
  return out;
}

ModelParams train_base(const ModelConfig& config, const std::vector<std::vector<int>>& dataset,
                       const OptimizerConfig& opt, uint64_t rng_seed,
                       std::vector<double>* step_losses) {
  if (dataset.empty()) throw std::invalid_argument("train_base: empty dataset");
  if (opt.batch_size <= 0) throw std::invalid_argument("train_base: batch_size must be positive");
  ModelParams params = init_model(config);
  ModelParams velocity = zeros_like(params);
  auto pviews = tensor_views(params);
  auto vviews = tensor_views(velocity);

  long step = 0;
  std::vector<size_t> order(dataset.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  for (int epoch = 0; epoch < opt.epochs; ++epoch) {
    Rng shuffle_rng(derive_seed(rng_seed, "base-epoch-shuffle", static_cast<uint64_t>(epoch)));
    shuffle_rng.shuffle(order);
    for (size_t start = 0; start < order.size(); start += opt.batch_size) {
      const size_t end = std::min(order.size(), start + opt.batch_size);
      std::vector<std::vector<int>> batch;
      batch.reserve(end - start);
      for (size_t i = start; i < end; ++i) batch.push_back(dataset[order[i]]);

      LossGrads lg = loss_and_gradients(params, batch, {}, /*want_param_grads=*/true,
                                        /*want_filter_grads=*/false);
      if (!std::isfinite(lg.loss))
        throw std::runtime_error("train_base: non-finite loss at step " + std::to_string(step));
      if (step_losses) step_losses->push_back(lg.loss);

      auto gviews = tensor_views(lg.param_grads);
      for (size_t i = 0; i < pviews.size(); ++i) {
        Eigen::Map<Eigen::ArrayXd> p(pviews[i].data, pviews[i].size());
        Eigen::Map<Eigen::ArrayXd> v(vviews[i].data, vviews[i].size());
        Eigen::Map<const Eigen::ArrayXd> g(gviews[i].data, gviews[i].size());
        v = opt.momentum * v + g;
        p -= opt.learning_rate * v;
      }
      ++step;
    }
  }
  return params;
}

std::vector<int> generate_tokens(const ModelParams& params, std::span<const int> prompt,
                                 const GenerationConfig& gen,
                                 const std::vector<Intervention>& interventions) {
  const auto& cfg = params.config;
  if (prompt.empty()) throw std::invalid_argument("generate: empty prompt");
  if (prompt.front() != cfg.bos_id)
    throw std::invalid_argument("generate: prompt must begin with BOS");
  const long cap = std::min<long>(gen.max_length, cfg.max_seq_len);
  const InterventionMap ivs = index_interventions(interventions, cfg);

  Batch batch;
  batch.n_seq = 1;
  batch.tokens.assign(prompt.begin(), prompt.end());
  Rng rng(gen.seed);
  std::vector<int> generated;
  HookContext ctx;
  ctx.interventions = &ivs;
  ctx.n_seq = 1;

  while (static_cast<long>(batch.tokens.size()) < cap) {
    batch.seq_len = static_cast<long>(batch.tokens.size());
    ctx.seq_len = batch.seq_len;
    const Eigen::MatrixXd logits = run_forward(params, batch, ctx, /*logits_all=*/false);
    const Eigen::VectorXd row = logits.row(0).transpose();
    const int next = sample_next_token(row, gen, rng);
    batch.tokens.push_back(next);
    generated.push_back(next);
    if (next == cfg.eos_id) break;
  }
  return generated;
}

std::string generate(const ModelParams& params, std::span<const int> prompt,
                     const GenerationConfig& gen, const Vocabulary& vocab,
                     const std::vector<Intervention>& interventions) {
  const auto ids = generate_tokens(params, prompt, gen, interventions);
  return detokenize(ids, vocab);
}

}  // namespace filterlab
