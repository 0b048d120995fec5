// SPDX-License-Identifier: Apache-2.0
#include "madtp/budget.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "madtp/errors.hpp"

namespace madtp::budget {

void FlopsModel::validate() const {
  if (vision_width == 0 || language_width == 0 || heads == 0 || ffn_mult == 0 || layers == 0 ||
      patches == 0 || words == 0 || vision_input_dim == 0 || language_input_dim == 0 ||
      learnable_tokens == 0 || token_width == 0 || head_flops < 0.0) {
    throw InvalidArgument("flops model: every size must be positive");
  }
}

double attention_flops(double n, double d) { return 4.0 * n * d * d + 2.0 * n * n * d; }

double ffn_flops(double n, double d, std::size_t ffn_mult) {
  return 2.0 * static_cast<double>(ffn_mult) * n * d * d;
}

double cross_attention_flops(double n_query, double n_context, double d_query, double d_context) {
  return 2.0 * n_query * d_query * d_query + 2.0 * n_context * d_context * d_query +
         2.0 * n_query * n_context * d_query;
}

double mag_overhead_flops(double n, double d, std::size_t k, std::size_t d_k) {
  const double dk = static_cast<double>(d_k);
  return n * d * dk + 2.0 * static_cast<double>(k) * n * dk;
}

double block_flops(double n, double d, std::size_t heads, std::size_t ffn_mult) {
  if (!(n > 0.0) || !(d > 0.0) || heads == 0 || ffn_mult == 0)
    throw InvalidArgument("block_flops: arguments must be positive");
  return attention_flops(n, d) + ffn_flops(n, d, ffn_mult);
}

double embedding_flops(const FlopsModel& m) {
  return static_cast<double>(m.patches * m.vision_input_dim * m.vision_width +
                             m.words * m.language_input_dim * m.language_width);
}

double layer_flops(const LayerRecord& rec, const FlopsModel& m) {
  const double d = static_cast<double>(rec.branch == Modality::vision ? m.vision_width : m.language_width);
  const double n_in = static_cast<double>(rec.tokens_in);
  const double n_out = static_cast<double>(rec.tokens_out);
  double f = attention_flops(n_in, d) + ffn_flops(n_out, d, m.ffn_mult);
  if (rec.context > 0) {
    f += cross_attention_flops(n_out, static_cast<double>(rec.context), d,
                               static_cast<double>(m.vision_width));
  }
  if (m.include_overhead) f += mag_overhead_flops(n_in, d, m.learnable_tokens, m.token_width);
  return f;
}

double model_flops(const InstanceTrace& trace, const FlopsModel& m) {
  if (trace.layers.size() != 2 * m.layers) {
    throw InvalidArgument("model_flops: report has " + std::to_string(trace.layers.size()) +
                          " layer records, expected " + std::to_string(2 * m.layers));
  }
  std::vector<int> seen(2 * m.layers, 0);
  double f = embedding_flops(m) + m.head_flops;
  for (const LayerRecord& r : trace.layers) {
    if (r.layer >= m.layers) throw InvalidArgument("model_flops: layer index out of range");
    ++seen[2 * r.layer + (r.branch == Modality::vision ? 0 : 1)];
    f += layer_flops(r, m);
  }
  if (std::any_of(seen.begin(), seen.end(), [](int s) { return s != 1; }))
    throw InvalidArgument("model_flops: report does not cover every layer and branch exactly once");
  return f / 1e9;
}

double baseline_gflops(const FlopsModel& m) {
  m.validate();
  InstanceTrace t;
  for (std::size_t l = 0; l < m.layers; ++l) {
    LayerRecord v;
    v.layer = l;
    v.branch = Modality::vision;
    v.tokens_in = v.tokens_out = m.patches + 1;
    LayerRecord w;
    w.layer = l;
    w.branch = Modality::language;
    w.tokens_in = w.tokens_out = m.words + 1;
    w.context = m.cross_attention ? m.patches + 1 : 0;
    t.layers.push_back(v);
    t.layers.push_back(w);
  }
  return model_flops(t, m);
}

double dataset_average_flops(std::span<const double> per_pair) {
  if (per_pair.empty()) throw InvalidArgument("dataset_average_flops: empty dataset");
  double s = 0.0;
  for (double x : per_pair) s += x;
  return s / static_cast<double>(per_pair.size());
}

BudgetState make_budget(double target_ratio, double baseline, double temperature, double eta,
                        double t_min, double t_max) {
  if (!(target_ratio >= 0.0 && target_ratio < 1.0)) throw InvalidArgument("target ratio must be in [0,1)");
  if (!(baseline > 0.0)) throw InvalidArgument("baseline GFLOPs must be positive");
  if (!(t_min > 0.0 && t_min <= t_max)) throw InvalidArgument("temperature clamp bounds invalid");
  if (!(eta > 0.0)) throw InvalidArgument("controller gain must be positive");
  BudgetState s;
  s.target_ratio = target_ratio;
  s.baseline = baseline;
  s.target = (1.0 - target_ratio) * baseline;
  s.temperature = std::clamp(temperature, t_min, t_max);
  s.eta = eta;
  s.t_min = t_min;
  s.t_max = t_max;
  return s;
}

BudgetState adjust_temperature(BudgetState state, double measured) {
  if (!(measured > 0.0)) throw InvalidArgument("adjust_temperature: measured GFLOPs must be positive");
  state.history.push_back({state.history.size(), measured, state.temperature});
  if (measured != state.target) {
    const double t = state.temperature * std::pow(measured / state.target, state.eta);
    state.temperature = std::clamp(t, state.t_min, state.t_max);
  }
  return state;
}

}  // namespace madtp::budget
