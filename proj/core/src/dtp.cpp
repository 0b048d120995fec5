// SPDX-License-Identifier: Apache-2.0
#include "madtp/dtp.hpp"

#include <algorithm>
#include <numeric>
#include <string>

#include "madtp/errors.hpp"

namespace madtp::dtp {

std::string_view to_string(KeepPolicy p) {
  switch (p) {
    case KeepPolicy::max_keep: return "max-keep";
    case KeepPolicy::mean_keep: return "mean-keep";
    case KeepPolicy::per_instance: return "per-instance";
  }
  return "?";
}

KeepPolicy keep_policy_from_string(std::string_view s) {
  if (s == "max-keep") return KeepPolicy::max_keep;
  if (s == "mean-keep") return KeepPolicy::mean_keep;
  if (s == "per-instance") return KeepPolicy::per_instance;
  throw InvalidArgument("unknown keep policy '" + std::string(s) + "'");
}

namespace {

Vector normalized(Vector v) {
  double s = 0.0;
  for (double x : v) s += x;
  if (!(s > 0.0)) throw DegenerateInput("score vector sums to zero");
  for (double& x : v) x /= s;
  return v;
}

Vector column_max(const Matrix& a) {
  if (a.cols() == 0 || a.rows() == 0) throw InvalidArgument("attention map has no tokens");
  Vector m(a.row(0).begin(), a.row(0).end());
  for (std::size_t r = 1; r < a.rows(); ++r)
    for (std::size_t c = 0; c < a.cols(); ++c) m[c] = std::max(m[c], a(r, c));
  return m;
}

}  // namespace

Vector class_attention_score(const Matrix& a_self, std::size_t cls_index) {
  if (cls_index >= a_self.rows()) throw InvalidArgument("class_attention_score: index out of range");
  auto r = a_self.row(cls_index);
  return normalized(Vector(r.begin(), r.end()));
}

Vector self_attention_score(const Matrix& a_self) { return normalized(column_max(a_self)); }

Vector token_attention_score(const Matrix& a_token) { return normalized(column_max(a_token)); }

Vector fuse_tis(const Vector& s_cls, const Vector& s_self, const Vector& s_token,
                ScoreSwitches switches) {
  std::vector<const Vector*> parts;
  if (switches.cls) parts.push_back(&s_cls);
  if (switches.self) parts.push_back(&s_self);
  if (switches.token && !s_token.empty()) parts.push_back(&s_token);
  if (parts.empty()) throw InvalidArgument("fuse_tis: every score disabled");
  const std::size_t n = parts.front()->size();
  for (const Vector* p : parts)
    if (p->size() != n) throw InvalidArgument("fuse_tis: length mismatch");
  Vector tis(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (const Vector* p : parts) s += (*p)[i];
    tis[i] = s / static_cast<double>(parts.size());
  }
  return tis;
}

TokenImportance importance(const Matrix& a_self, const Matrix* a_token, std::size_t cls_index,
                           ScoreSwitches switches) {
  if (a_self.rows() != a_self.cols()) throw InvalidArgument("A_self must be square");
  TokenImportance ti;
  ti.s_cls = class_attention_score(a_self, cls_index);
  ti.s_self = self_attention_score(a_self);
  if (a_token != nullptr) {
    if (a_token->cols() != a_self.cols()) throw InvalidArgument("A_token column count != token count");
    ti.s_token = token_attention_score(*a_token);
  }
  ti.tis = fuse_tis(ti.s_cls, ti.s_self, ti.s_token, switches);
  return ti;
}

Matrix sparse_token_attention(const Matrix& a_token, double temperature) {
  if (!(temperature > 0.0)) throw InvalidArgument("temperature must be positive");
  Matrix out(a_token.rows(), a_token.cols());
  Vector scaled(a_token.cols());
  for (std::size_t r = 0; r < a_token.rows(); ++r) {
    auto row = a_token.row(r);
    for (std::size_t c = 0; c < row.size(); ++c) scaled[c] = temperature * row[c];
    const numerics::Distribution p = numerics::sparsemax(scaled);
    std::copy(p.weights().begin(), p.weights().end(), out.row(r).begin());
  }
  return out;
}

double threshold(const Matrix& a_hat, const Vector& tis) {
  if (a_hat.cols() != tis.size()) throw InvalidArgument("threshold: dimension mismatch");
  if (a_hat.rows() == 0 || tis.empty()) throw InvalidArgument("threshold: empty input");
  double theta = 0.0;
  for (std::size_t k = 0; k < a_hat.rows(); ++k) {
    double t = 0.0;
    for (std::size_t i = 0; i < tis.size(); ++i) t += a_hat(k, i) * tis[i];
    theta = k == 0 ? t : std::min(theta, t);
  }
  // Each row is a convex combination of TIS; clamp away rounding outside the hull.
  const auto [lo, hi] = std::minmax_element(tis.begin(), tis.end());
  return std::clamp(theta, *lo, *hi);
}

Mask prune_mask(const Vector& tis, double theta, const std::vector<std::size_t>& specials) {
  Mask m;
  m.keep.assign(tis.size(), false);
  std::vector<bool> special(tis.size(), false);
  for (std::size_t s : specials) {
    if (s >= tis.size()) throw InvalidArgument("prune_mask: special index out of range");
    special[s] = true;
  }
  bool any_content = false;
  for (std::size_t i = 0; i < tis.size(); ++i) {
    m.keep[i] = special[i] || tis[i] > theta;
    any_content = any_content || (!special[i] && m.keep[i]);
  }
  if (!any_content) {
    std::size_t best = tis.size();
    for (std::size_t i = 0; i < tis.size(); ++i) {
      if (special[i]) continue;
      if (best == tis.size() || tis[i] > tis[best]) best = i;
    }
    if (best < tis.size()) {
      m.keep[best] = true;
      m.force_kept = true;
    }
  }
  return m;
}

std::optional<Vector> merge_pruned(const Matrix& tokens, const Vector& tis,
                                   const std::vector<bool>& keep) {
  if (tokens.rows() != tis.size() || keep.size() != tis.size())
    throw InvalidArgument("merge_pruned: length mismatch");
  double wsum = 0.0;
  std::size_t pruned = 0;
  for (std::size_t i = 0; i < keep.size(); ++i) {
    if (!keep[i]) {
      wsum += tis[i];
      ++pruned;
    }
  }
  if (pruned == 0) return std::nullopt;
  const bool uniform = !(wsum > 0.0);
  Vector merged(tokens.cols(), 0.0);
  for (std::size_t i = 0; i < keep.size(); ++i) {
    if (keep[i]) continue;
    const double w = uniform ? 1.0 : tis[i];
    auto r = tokens.row(i);
    for (std::size_t c = 0; c < merged.size(); ++c) merged[c] += w * r[c];
  }
  const double denom = uniform ? static_cast<double>(pruned) : wsum;
  for (double& x : merged) x /= denom;
  return merged;
}

std::vector<std::size_t> keep_order(const Vector& tis, const std::vector<std::size_t>& specials) {
  std::vector<bool> special(tis.size(), false);
  for (std::size_t s : specials) special.at(s) = true;
  std::vector<std::size_t> order(tis.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (special[a] != special[b]) return static_cast<bool>(special[a]);
    if (special[a]) return false;
    return tis[a] > tis[b];
  });
  return order;
}

std::size_t count_kept(const std::vector<bool>& keep) {
  return static_cast<std::size_t>(std::count(keep.begin(), keep.end(), true));
}

std::vector<std::vector<bool>> apply_policy(const std::vector<std::vector<bool>>& masks,
                                            const std::vector<Vector>& tis,
                                            const std::vector<std::vector<std::size_t>>& specials,
                                            KeepPolicy policy) {
  if (masks.empty()) throw InvalidArgument("apply_policy: empty batch");
  if (tis.size() != masks.size() || specials.size() != masks.size())
    throw InvalidArgument("apply_policy: batch size mismatch");
  if (policy == KeepPolicy::per_instance) return masks;

  std::size_t target = 0;
  if (policy == KeepPolicy::max_keep) {
    for (const auto& m : masks) target = std::max(target, count_kept(m));
  } else {
    std::size_t total = 0;
    for (const auto& m : masks) total += count_kept(m);
    // Round half up on an exact rational: floor((2*total + B) / (2*B)).
    const std::size_t b = masks.size();
    target = (2 * total + b) / (2 * b);
  }

  std::vector<std::vector<bool>> out;
  out.reserve(masks.size());
  for (std::size_t i = 0; i < masks.size(); ++i) {
    const std::size_t n = tis[i].size();
    std::size_t k = target;
    if (policy == KeepPolicy::mean_keep) k = std::max(k, specials[i].size() + 1);
    k = std::min(k, n);
    const auto order = keep_order(tis[i], specials[i]);
    std::vector<bool> keep(n, false);
    for (std::size_t j = 0; j < k; ++j) keep[order[j]] = true;
    out.push_back(std::move(keep));
  }
  return out;
}

namespace {

TokenSequence rebuild(const TokenSequence& in, const std::vector<bool>& keep,
                      const std::optional<Vector>& merged) {
  const std::size_t width = in.tokens.cols();
  const std::size_t kept = count_kept(keep);
  const std::size_t rows = kept + (merged ? 1 : 0);
  TokenSequence out;
  out.tokens = Matrix(rows, width);
  out.alive.assign(in.alive.size(), false);
  std::vector<bool> special(in.size(), false);
  for (std::size_t s : in.specials) special[s] = true;
  std::size_t r = 0;
  for (std::size_t i = 0; i < in.size(); ++i) {
    if (!keep[i]) continue;
    std::copy(in.tokens.row(i).begin(), in.tokens.row(i).end(), out.tokens.row(r).begin());
    out.origin.push_back(in.origin[i]);
    if (special[i]) out.specials.push_back(r);
    if (in.origin[i] >= 0) out.alive[static_cast<std::size_t>(in.origin[i])] = true;
    ++r;
  }
  if (merged) {
    std::copy(merged->begin(), merged->end(), out.tokens.row(r).begin());
    out.origin.push_back(kMergedOrigin);
  }
  return out;
}

}  // namespace

PruneResult prune(const TokenBatch& tokens, const std::vector<InstanceMaps>& maps,
                  const PruneSettings& settings) {
  if (maps.size() != tokens.instances.size()) throw InvalidArgument("prune: maps/batch size mismatch");
  const std::size_t b = tokens.instances.size();
  PruneResult res;
  res.tokens.modality = tokens.modality;
  res.decisions.resize(b);

  std::vector<std::vector<bool>> own(b);
  std::vector<Vector> tis(b);
  std::vector<std::vector<std::size_t>> specials(b);

  for (std::size_t i = 0; i < b; ++i) {
    const TokenSequence& seq = tokens.instances[i];
    const InstanceMaps& m = maps[i];
    if (m.a_self == nullptr) throw InvalidArgument("prune: missing A_self");
    if (m.a_self->rows() != seq.size()) throw InvalidArgument("prune: A_self size != token count");
    if (seq.specials.empty()) throw InvalidArgument("prune: sequence without special token");
    PruneDecision& d = res.decisions[i];
    d.importance = importance(*m.a_self, m.a_token, seq.specials.front(), settings.scores);
    if (m.a_token != nullptr) {
      d.theta = threshold(sparse_token_attention(*m.a_token, settings.temperature), d.importance.tis);
    } else {
      const Matrix uniform(1, seq.size(), 1.0 / static_cast<double>(seq.size()));
      d.theta = threshold(uniform, d.importance.tis);
    }
    tis[i] = d.importance.tis;
    specials[i] = seq.specials;

    if (!settings.enabled) {
      own[i].assign(seq.size(), true);
      continue;
    }
    switch (settings.mode) {
      case PruneMode::threshold: {
        Mask mk = prune_mask(d.importance.tis, d.theta, seq.specials);
        own[i] = std::move(mk.keep);
        d.force_kept = mk.force_kept;
        break;
      }
      case PruneMode::drop_lowest: {
        const std::size_t content = seq.size() - seq.specials.size();
        if (settings.count >= content) {
          throw InvalidArgument("drop_lowest: k=" + std::to_string(settings.count) +
                                " must be below the " + std::to_string(content) +
                                " content tokens present");
        }
        const auto order = keep_order(d.importance.tis, seq.specials);
        own[i].assign(seq.size(), false);
        for (std::size_t j = 0; j + settings.count < seq.size(); ++j) own[i][order[j]] = true;
        break;
      }
      case PruneMode::keep_top: {
        const std::size_t k =
            std::min(seq.size(), std::max(settings.count, seq.specials.size() + 1));
        const auto order = keep_order(d.importance.tis, seq.specials);
        own[i].assign(seq.size(), false);
        for (std::size_t j = 0; j < k; ++j) own[i][order[j]] = true;
        break;
      }
    }
  }

  std::vector<std::vector<bool>> final_masks = own;
  if (settings.enabled && settings.mode == PruneMode::threshold) {
    final_masks = apply_policy(own, tis, specials, settings.policy);
  }
  const bool merge = settings.enabled && settings.mode != PruneMode::drop_lowest;

  for (std::size_t i = 0; i < b; ++i) {
    PruneDecision& d = res.decisions[i];
    const TokenSequence& seq = tokens.instances[i];
    d.own_count = count_kept(own[i]);
    d.own_mask = std::move(own[i]);
    d.keep = std::move(final_masks[i]);
    d.kept_count = count_kept(d.keep);
    if (merge) {
      d.merged = merge_pruned(seq.tokens, d.importance.tis, d.keep);
      if (d.merged) {
        for (std::size_t j = 0; j < d.keep.size(); ++j)
          if (!d.keep[j]) d.merged_tis = std::max(d.merged_tis, d.importance.tis[j]);
      }
    }
    res.tokens.instances.push_back(rebuild(seq, d.keep, d.merged));
  }
  return res;
}

}  // namespace madtp::dtp
