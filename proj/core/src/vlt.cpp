// SPDX-License-Identifier: Apache-2.0
#include "madtp/vlt.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

#include "madtp/errors.hpp"

namespace madtp {

std::string_view to_string(Modality m) { return m == Modality::vision ? "vision" : "language"; }

Modality modality_from_string(std::string_view s) {
  if (s == "vision") return Modality::vision;
  if (s == "language") return Modality::language;
  throw InvalidArgument("unknown modality '" + std::string(s) + "'");
}

}  // namespace madtp

namespace madtp::vlt {

using numerics::matmul;

std::string_view to_string(ModalityScope s) {
  switch (s) {
    case ModalityScope::vision: return "vision";
    case ModalityScope::language: return "language";
    case ModalityScope::both: return "both";
  }
  return "?";
}

ModalityScope scope_from_string(std::string_view s) {
  if (s == "vision") return ModalityScope::vision;
  if (s == "language") return ModalityScope::language;
  if (s == "both") return ModalityScope::both;
  throw InvalidArgument("unknown modality scope '" + std::string(s) + "'");
}

void VltConfig::validate() const {
  auto need = [](bool ok, const char* what) {
    if (!ok) throw InvalidArgument(std::string("config: ") + what);
  };
  need(layers >= 1, "layers must be >= 1");
  need(heads >= 1, "heads must be >= 1");
  need(vision_width >= 1 && vision_width % heads == 0, "vision width must be a positive multiple of heads");
  need(language_width >= 1 && language_width % heads == 0, "language width must be a positive multiple of heads");
  need(patches >= 1 && words >= 1, "patch and word counts must be >= 1");
  need(vision_input_dim >= 1 && language_input_dim >= 1, "input dims must be >= 1");
  need(learnable_tokens >= 1, "learnable token count must be >= 1");
  need(token_width >= 1, "learnable token width must be >= 1");
  need(alpha >= 0.0 && std::isfinite(alpha), "alpha must be finite and non-negative");
  need(temperature > 0.0 && std::isfinite(temperature), "temperature must be positive");
  need(target_ratio >= 0.0 && target_ratio < 1.0, "target ratio must be in [0,1)");
  need(ffn_mult >= 1, "ffn expansion must be >= 1");
  need(scores.cls || scores.self || scores.token, "at least one importance score must be enabled");
  need(qk_gain >= 0.0 && special_std >= 0.0 && token_gain > 0.0, "init gains must be non-negative");
}

budget::FlopsModel flops_model(const VltConfig& c) {
  budget::FlopsModel m;
  m.vision_width = c.vision_width;
  m.language_width = c.language_width;
  m.heads = c.heads;
  m.ffn_mult = c.ffn_mult;
  m.layers = c.layers;
  m.patches = c.patches;
  m.words = c.words;
  m.vision_input_dim = c.vision_input_dim;
  m.language_input_dim = c.language_input_dim;
  m.learnable_tokens = c.learnable_tokens;
  m.token_width = c.token_width;
  m.cross_attention = c.cross_attention;
  m.include_overhead = c.include_overhead;
  m.head_flops = 2.0 * static_cast<double>(c.vision_width + c.language_width);
  return m;
}

namespace {

class Init {
 public:
  explicit Init(std::uint64_t seed) : rng_(seed) {}

  Matrix gaussian(std::size_t r, std::size_t c, double std) {
    Matrix m(r, c);
    for (double& x : m.data()) x = draw(std);
    return m;
  }
  Vector gaussian(std::size_t n, double std) {
    Vector v(n);
    for (double& x : v) x = draw(std);
    return v;
  }

 private:
  double draw(double std) { return std == 0.0 ? 0.0 : std * normal_(rng_); }

  std::mt19937_64 rng_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

LayerNormParams unit_norm(std::size_t d) { return {Vector(d, 1.0), Vector(d, 0.0)}; }

BranchWeights init_branch(Init& g, const VltConfig& c, Modality m) {
  const std::size_t d = c.width(m);
  const std::size_t in = c.input_dim(m);
  const double sd = 1.0 / std::sqrt(static_cast<double>(d));
  const double sqk = c.qk_gain / std::sqrt(static_cast<double>(d));
  BranchWeights w;
  w.embed = g.gaussian(in, d, 1.0 / std::sqrt(static_cast<double>(in)));
  w.embed_bias = Vector(d, 0.0);
  w.special = g.gaussian(d, c.special_std);
  for (std::size_t l = 0; l < c.layers; ++l) {
    BlockWeights b;
    b.ln1 = unit_norm(d);
    b.attn.wq = g.gaussian(d, d, sqk);
    b.attn.wk = g.gaussian(d, d, sqk);
    b.attn.wv = g.gaussian(d, d, sd);
    b.attn.wo = g.gaussian(d, d, sd);
    b.ln2 = unit_norm(d);
    b.ffn.w1 = g.gaussian(d, c.ffn_mult * d, sd);
    b.ffn.b1 = Vector(c.ffn_mult * d, 0.0);
    b.ffn.w2 = g.gaussian(c.ffn_mult * d, d, 1.0 / std::sqrt(static_cast<double>(c.ffn_mult * d)));
    b.ffn.b2 = Vector(d, 0.0);
    if (c.cross_attention && m == Modality::language) {
      const std::size_t dv = c.vision_width;
      const double sv = 1.0 / std::sqrt(static_cast<double>(dv));
      CrossWeights x;
      x.ln = unit_norm(d);
      x.wq = g.gaussian(d, d, sqk);
      x.wk = g.gaussian(dv, d, c.qk_gain * sv);
      x.wv = g.gaussian(dv, d, sv);
      x.wo = g.gaussian(d, d, sd);
      b.cross = std::move(x);
    }
    w.blocks.push_back(std::move(b));
  }
  return w;
}

}  // namespace

Model build_model(const VltConfig& config) {
  config.validate();
  Init g(config.seed);
  Model m;
  m.config = config;
  m.weights.vision = init_branch(g, config, Modality::vision);
  m.weights.language = init_branch(g, config, Modality::language);
  const std::size_t dk = config.token_width;
  for (std::size_t l = 0; l < config.layers; ++l) {
    mag::LayerProjection p;
    p.w_v = g.gaussian(dk, config.vision_width, 1.0 / std::sqrt(static_cast<double>(config.vision_width)));
    p.b_v = Vector(dk, 0.0);
    p.w_t = g.gaussian(dk, config.language_width, 1.0 / std::sqrt(static_cast<double>(config.language_width)));
    p.b_t = Vector(dk, 0.0);
    m.mag.projections.layers.push_back(std::move(p));
  }
  m.mag.tokens = std::make_shared<mag::LearnableTokens>();
  m.mag.tokens->e = g.gaussian(config.learnable_tokens, dk, config.token_gain / std::sqrt(static_cast<double>(dk)));
  return m;
}

Matrix layer_norm(const Matrix& x, const LayerNormParams& p) {
  if (p.gamma.size() != x.cols() || p.beta.size() != x.cols()) throw InvalidArgument("layer_norm: width mismatch");
  Matrix y(x.rows(), x.cols());
  const double d = static_cast<double>(x.cols());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto row = x.row(r);
    double mean = 0.0;
    for (double v : row) mean += v;
    mean /= d;
    double var = 0.0;
    for (double v : row) var += (v - mean) * (v - mean);
    var /= d;
    const double inv = 1.0 / std::sqrt(var + 1e-5);
    for (std::size_t c = 0; c < x.cols(); ++c) y(r, c) = (row[c] - mean) * inv * p.gamma[c] + p.beta[c];
  }
  return y;
}

double gelu(double x) {
  constexpr double k = 0.7978845608028654;  // sqrt(2/pi)
  return 0.5 * x * (1.0 + std::tanh(k * (x + 0.044715 * x * x * x)));
}

TokenBatch tokenize(const std::vector<Matrix>& raw, Modality m, const BranchWeights& w,
                    const VltConfig& config) {
  const std::size_t n = config.length(m);
  const std::size_t in = config.input_dim(m);
  TokenBatch b;
  b.modality = m;
  for (const Matrix& r : raw) {
    if (r.rows() != n || r.cols() != in) {
      throw InvalidArgument("tokenize: " + std::string(to_string(m)) + " input is " +
                            std::to_string(r.rows()) + "x" + std::to_string(r.cols()) + ", expected " +
                            std::to_string(n) + "x" + std::to_string(in));
    }
    if (!r.all_finite()) throw InvalidArgument("tokenize: non-finite input feature");
    Matrix e = matmul(r, w.embed);
    TokenSequence s;
    s.tokens = Matrix(n + 1, w.embed.cols());
    std::copy(w.special.begin(), w.special.end(), s.tokens.row(0).begin());
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t c = 0; c < e.cols(); ++c) s.tokens(i + 1, c) = e(i, c) + w.embed_bias[c];
    s.origin.resize(n + 1);
    for (std::size_t i = 0; i <= n; ++i) s.origin[i] = static_cast<int>(i);
    s.specials = {0};
    s.alive.assign(n + 1, true);
    b.instances.push_back(std::move(s));
  }
  return b;
}

namespace {

Matrix columns(const Matrix& x, std::size_t c0, std::size_t w) {
  Matrix out(x.rows(), w);
  for (std::size_t r = 0; r < x.rows(); ++r)
    for (std::size_t c = 0; c < w; ++c) out(r, c) = x(r, c0 + c);
  return out;
}

void add_in_place(Matrix& a, const Matrix& b) {
  for (std::size_t i = 0; i < a.data().size(); ++i) a.data()[i] += b.data()[i];
}

}  // namespace

MhsaResult mhsa_forward(const Matrix& x, const LayerNormParams& ln, const AttentionWeights& w,
                        std::size_t heads) {
  const std::size_t d = x.cols();
  if (heads == 0 || d % heads != 0) throw InvalidArgument("mhsa: width not divisible by heads");
  if (w.wq.rows() != d || w.wq.cols() != d || w.wk.rows() != d || w.wv.rows() != d || w.wo.rows() != d)
    throw InvalidArgument("mhsa: weight shape mismatch");
  const Matrix h = layer_norm(x, ln);
  const Matrix q = matmul(h, w.wq), k = matmul(h, w.wk), v = matmul(h, w.wv);
  const std::size_t dh = d / heads;
  const double scale = std::sqrt(static_cast<double>(dh));
  MhsaResult res;
  res.attn = Matrix(x.rows(), x.rows());
  Matrix concat(x.rows(), d);
  for (std::size_t hd = 0; hd < heads; ++hd) {
    auto a = numerics::scaled_dot_attention(columns(q, hd * dh, dh), columns(k, hd * dh, dh),
                                            columns(v, hd * dh, dh), scale);
    for (std::size_t r = 0; r < x.rows(); ++r)
      for (std::size_t c = 0; c < dh; ++c) concat(r, hd * dh + c) = a.output(r, c);
    for (std::size_t i = 0; i < res.attn.data().size(); ++i)
      res.attn.data()[i] += a.attn.data()[i] / static_cast<double>(heads);
    res.head_attn.push_back(std::move(a.attn));
  }
  res.out = x;
  add_in_place(res.out, matmul(concat, w.wo));
  return res;
}

Matrix ffn_forward(const Matrix& x, const LayerNormParams& ln, const FfnWeights& w) {
  if (w.w1.rows() != x.cols() || w.w2.cols() != x.cols() || w.w1.cols() != w.w2.rows() ||
      w.b1.size() != w.w1.cols() || w.b2.size() != w.w2.cols())
    throw InvalidArgument("ffn: weight shape mismatch");
  Matrix hidden = matmul(layer_norm(x, ln), w.w1);
  for (std::size_t r = 0; r < hidden.rows(); ++r)
    for (std::size_t c = 0; c < hidden.cols(); ++c) hidden(r, c) = gelu(hidden(r, c) + w.b1[c]);
  Matrix out = matmul(hidden, w.w2);
  for (std::size_t r = 0; r < out.rows(); ++r)
    for (std::size_t c = 0; c < out.cols(); ++c) out(r, c) += x(r, c) + w.b2[c];
  return out;
}

Matrix cross_attention_forward(const Matrix& queries, const Matrix& context,
                               const std::optional<CrossWeights>& w, bool enabled) {
  if (!enabled || !w) throw UnsupportedOperation("cross attention is disabled in this config");
  if (w->wq.rows() != queries.cols() || w->wk.rows() != context.cols() || w->wv.rows() != context.cols())
    throw InvalidArgument("cross attention: weight shape mismatch");
  const Matrix h = layer_norm(queries, w->ln);
  const Matrix q = matmul(h, w->wq);
  const Matrix k = matmul(context, w->wk);
  const Matrix v = matmul(context, w->wv);
  auto a = numerics::scaled_dot_attention(q, k, v, std::sqrt(static_cast<double>(q.cols())));
  Matrix out = queries;
  add_in_place(out, matmul(a.output, w->wo));
  return out;
}

std::pair<TokenBatch, std::vector<Matrix>> mhsa_forward(const TokenBatch& b, const BlockWeights& w,
                                                        std::size_t heads) {
  std::pair<TokenBatch, std::vector<Matrix>> res{b, {}};
  for (TokenSequence& s : res.first.instances) {
    MhsaResult r = mhsa_forward(s.tokens, w.ln1, w.attn, heads);
    s.tokens = std::move(r.out);
    res.second.push_back(std::move(r.attn));
  }
  return res;
}

TokenBatch ffn_forward(const TokenBatch& b, const BlockWeights& w) {
  TokenBatch out = b;
  for (TokenSequence& s : out.instances) s.tokens = ffn_forward(s.tokens, w.ln2, w.ffn);
  return out;
}

dtp::PruneSettings DtpHandle::for_layer(std::size_t layer, Modality m) const {
  dtp::PruneSettings s = settings;
  s.enabled = settings.enabled && (m == Modality::vision ? vision : language);
  if (layer < counts.size()) s.count = counts[layer][m == Modality::vision ? 0 : 1];
  return s;
}

DtpHandle make_dtp_handle(const VltConfig& c) {
  DtpHandle h;
  h.settings.enabled = c.pruning;
  h.settings.mode = dtp::PruneMode::threshold;
  h.settings.temperature = c.temperature;
  h.settings.policy = c.keep_policy;
  h.settings.scores = c.scores;
  h.vision = c.scope != ModalityScope::language;
  h.language = c.scope != ModalityScope::vision;
  return h;
}

BlockOutput block_forward(const TokenBatch& tokens, const BlockWeights& w, std::size_t layer,
                          const VltConfig& config, const MagHandle& mag, const DtpHandle& dtp,
                          const TokenBatch* context) {
  if (layer >= config.layers) throw InvalidArgument("block_forward: layer index out of range");
  if (mag.params == nullptr || !mag.params->tokens) throw InvalidArgument("block_forward: no MAG parameters");
  const Modality m = tokens.modality;
  BlockOutput out;

  auto [attended, a_self] = mhsa_forward(tokens, w, config.heads);

  std::vector<dtp::InstanceMaps> maps;
  for (std::size_t i = 0; i < attended.instances.size(); ++i) {
    const Matrix& x = attended.instances[i].tokens;
    out.token_attn.push_back(
        mag::token_attention(*mag.params->tokens, mag::project(x, m, layer, mag.params->projections)));
    out.mag_inputs.push_back(x);
  }
  for (std::size_t i = 0; i < attended.instances.size(); ++i)
    maps.push_back({&a_self[i], &out.token_attn[i].a_token});

  dtp::PruneResult pr = dtp::prune(attended, maps, dtp.for_layer(layer, m));

  const bool cross = config.cross_attention && m == Modality::language && context != nullptr;
  if (cross && context->instances.size() != pr.tokens.instances.size())
    throw InvalidArgument("block_forward: context batch size mismatch");
  for (std::size_t i = 0; i < pr.tokens.instances.size(); ++i) {
    TokenSequence& s = pr.tokens.instances[i];
    if (cross) s.tokens = cross_attention_forward(s.tokens, context->instances[i].tokens, w.cross, true);
  }
  out.tokens = ffn_forward(pr.tokens, w);

  const budget::FlopsModel fm = flops_model(config);
  for (std::size_t i = 0; i < pr.decisions.size(); ++i) {
    const dtp::PruneDecision& d = pr.decisions[i];
    const Vector& tis = d.importance.tis;
    LayerRecord r;
    r.layer = layer;
    r.branch = m;
    r.tokens_in = tokens.instances[i].size();
    r.own_count = d.own_count;
    r.kept_count = d.kept_count;
    r.tokens_out = out.tokens.instances[i].size();
    r.context = cross ? context->instances[i].size() : 0;
    r.theta = d.theta;
    r.tis_sum = 0.0;
    for (double t : tis) r.tis_sum += t;
    r.tis_min = *std::min_element(tis.begin(), tis.end());
    r.tis_max = *std::max_element(tis.begin(), tis.end());
    r.merged_tis = d.merged_tis;
    r.merged = d.merged.has_value();
    r.force_kept = d.force_kept;
    r.kept_origins = out.tokens.instances[i].origin;
    r.gflops = budget::layer_flops(r, fm) / 1e9;
    out.records.push_back(std::move(r));
  }
  out.a_self = std::move(a_self);
  return out;
}

ForwardResult model_forward(const std::vector<Matrix>& images, const std::vector<Matrix>& texts,
                            const Model& model, const DtpHandle& dtp, const ForwardOptions& options) {
  const VltConfig& c = model.config;
  if (images.size() != texts.size()) throw InvalidArgument("model_forward: image/text count mismatch");
  const std::size_t b = images.size();
  ForwardResult res;
  res.vision = tokenize(images, Modality::vision, model.weights.vision, c);
  res.language = tokenize(texts, Modality::language, model.weights.language, c);
  res.alignment.resize(b);
  res.report.instances.resize(b);
  if (options.keep_activations) {
    res.vision_inputs.resize(b);
    res.language_inputs.resize(b);
  }
  if (options.keep_maps) res.maps.resize(b);
  for (std::size_t i = 0; i < b; ++i) res.report.instances[i].index = i;

  const MagHandle mag{&model.mag};
  for (std::size_t l = 0; l < c.layers; ++l) {
    BlockOutput v = block_forward(res.vision, model.weights.vision.blocks[l], l, c, mag, dtp, nullptr);
    BlockOutput t = block_forward(res.language, model.weights.language.blocks[l], l, c, mag, dtp,
                                  c.cross_attention ? &v.tokens : nullptr);
    for (std::size_t i = 0; i < b; ++i) {
      AlignmentRecord a;
      a.layer = l;
      a.tokens = model.mag.tokens.get();
      a.ev = v.token_attn[i].features;
      a.el = t.token_attn[i].features;
      a.l_sim = mag::alignment_loss(a.ev, a.el);
      res.alignment[i].push_back(std::move(a));
      res.report.instances[i].layers.push_back(v.records[i]);
      res.report.instances[i].layers.push_back(t.records[i]);
      if (options.keep_activations) {
        res.vision_inputs[i].push_back(std::move(v.mag_inputs[i]));
        res.language_inputs[i].push_back(std::move(t.mag_inputs[i]));
      }
      if (options.keep_maps) {
        res.maps[i].push_back({l, Modality::vision, std::move(v.a_self[i]), v.token_attn[i].a_token});
        res.maps[i].push_back({l, Modality::language, std::move(t.a_self[i]), t.token_attn[i].a_token});
      }
    }
    res.vision = std::move(v.tokens);
    res.language = std::move(t.tokens);
  }

  const budget::FlopsModel fm = flops_model(c);
  std::vector<double> per_pair;
  for (InstanceTrace& tr : res.report.instances) {
    tr.gflops = budget::model_flops(tr, fm);
    per_pair.push_back(tr.gflops);
  }
  res.report.baseline_gflops = budget::baseline_gflops(fm);
  if (!per_pair.empty()) {
    res.report.dataset_average_gflops = budget::dataset_average_flops(per_pair);
    res.report.reduce_ratio = 1.0 - res.report.dataset_average_gflops / res.report.baseline_gflops;
  }
  return res;
}

}  // namespace madtp::vlt
