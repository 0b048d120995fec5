// SPDX-License-Identifier: Apache-2.0
#include "madtp/mag.hpp"

#include <cmath>
#include <string>

#include "madtp/errors.hpp"

namespace madtp::mag {

using numerics::matmul;
using numerics::matmul_at;
using numerics::matmul_bt;

Matrix project(const Matrix& tokens, const Matrix& w, const Vector& b) {
  if (tokens.cols() != w.cols()) {
    throw InvalidArgument("project: token width " + std::to_string(tokens.cols()) +
                          " != projection input width " + std::to_string(w.cols()));
  }
  if (b.size() != w.rows()) throw InvalidArgument("project: bias length mismatch");
  Matrix out = matmul_bt(tokens, w);
  for (std::size_t r = 0; r < out.rows(); ++r)
    for (std::size_t c = 0; c < out.cols(); ++c) out(r, c) += b[c];
  return out;
}

Matrix project(const Matrix& tokens, Modality m, std::size_t layer, const ProjectionWeights& weights) {
  if (layer >= weights.layers.size()) throw InvalidArgument("project: layer index out of range");
  const LayerProjection& p = weights.layers[layer];
  return m == Modality::vision ? project(tokens, p.w_v, p.b_v) : project(tokens, p.w_t, p.b_t);
}

TokenAttention token_attention(const LearnableTokens& tokens, const Matrix& mapped) {
  const Matrix& e = tokens.e;
  if (mapped.cols() != e.cols()) throw InvalidArgument("token_attention: mapped width != d_k");
  auto r = numerics::scaled_dot_attention(e, mapped, mapped, std::sqrt(static_cast<double>(e.cols())));
  return {std::move(r.attn), std::move(r.output)};
}

double alignment_loss(const Matrix& ev, const Matrix& el) {
  if (ev.rows() != el.rows() || ev.cols() != el.cols())
    throw InvalidArgument("alignment_loss: shape mismatch");
  if (ev.rows() == 0) throw InvalidArgument("alignment_loss: no rows");
  double s = 0.0;
  for (std::size_t k = 0; k < ev.rows(); ++k) s += 1.0 - numerics::cosine_similarity(ev.row(k), el.row(k));
  return s / static_cast<double>(ev.rows());
}

MagGrad zero_grad(const MagParams& p) {
  MagGrad g;
  g.d_e = Matrix(p.tokens->e.rows(), p.tokens->e.cols());
  for (const LayerProjection& l : p.projections.layers) {
    g.d_layers.push_back({Matrix(l.w_v.rows(), l.w_v.cols()), Vector(l.b_v.size(), 0.0),
                          Matrix(l.w_t.rows(), l.w_t.cols()), Vector(l.b_t.size(), 0.0)});
  }
  return g;
}

namespace {

// d cos(a, b) / d a
Vector cosine_grad(std::span<const double> a, std::span<const double> b) {
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  const double na = std::sqrt(aa), nb = std::sqrt(bb);
  const double c = ab / (na * nb);
  Vector g(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) g[i] = b[i] / (na * nb) - c * a[i] / aa;
  return g;
}

struct BranchPass {
  Matrix x;
  Matrix mapped;
  TokenAttention att;
};

// Backprop d_features through token attention and the projection.
void backward_branch(const BranchPass& bp, const Matrix& d_feat, const Matrix& e, Matrix& d_e,
                     Matrix& d_w, Vector& d_b, double scale) {
  const Matrix& a = bp.att.a_token;
  const double inv = 1.0 / std::sqrt(static_cast<double>(e.cols()));
  Matrix d_a = matmul_bt(d_feat, bp.mapped);   // K x n
  Matrix d_mapped = matmul_at(a, d_feat);      // n x d_k
  Matrix d_s(a.rows(), a.cols());
  for (std::size_t k = 0; k < a.rows(); ++k) {
    double dot = 0.0;
    for (std::size_t j = 0; j < a.cols(); ++j) dot += a(k, j) * d_a(k, j);
    for (std::size_t j = 0; j < a.cols(); ++j) d_s(k, j) = a(k, j) * (d_a(k, j) - dot) * inv;
  }
  Matrix de = matmul(d_s, bp.mapped);      // K x d_k
  Matrix dm2 = matmul_at(d_s, e);          // n x d_k
  for (std::size_t i = 0; i < d_mapped.data().size(); ++i) d_mapped.data()[i] += dm2.data()[i];
  for (std::size_t i = 0; i < de.data().size(); ++i) d_e.data()[i] += scale * de.data()[i];
  Matrix dw = matmul_at(d_mapped, bp.x);   // d_k x width
  for (std::size_t i = 0; i < dw.data().size(); ++i) d_w.data()[i] += scale * dw.data()[i];
  for (std::size_t r = 0; r < d_mapped.rows(); ++r)
    for (std::size_t c = 0; c < d_mapped.cols(); ++c) d_b[c] += scale * d_mapped(r, c);
}

}  // namespace

double alignment_objective(const MagParams& p, const std::vector<Matrix>& xv,
                           const std::vector<Matrix>& xl, MagGrad* grad, double scale) {
  if (!p.tokens) throw InvalidArgument("alignment_objective: no learnable tokens");
  if (xv.size() != xl.size() || xv.empty()) throw InvalidArgument("alignment_objective: layer count mismatch");
  if (xv.size() > p.projections.layers.size()) throw InvalidArgument("alignment_objective: too many layers");
  const Matrix& e = p.tokens->e;
  const double layers = static_cast<double>(xv.size());
  const double k_rows = static_cast<double>(e.rows());
  double total = 0.0;
  for (std::size_t l = 0; l < xv.size(); ++l) {
    BranchPass v{xv[l], project(xv[l], Modality::vision, l, p.projections), {}};
    BranchPass t{xl[l], project(xl[l], Modality::language, l, p.projections), {}};
    v.att = token_attention(*p.tokens, v.mapped);
    t.att = token_attention(*p.tokens, t.mapped);
    total += alignment_loss(v.att.features, t.att.features);
    if (grad == nullptr) continue;
    Matrix dfv(e.rows(), e.cols()), dfl(e.rows(), e.cols());
    for (std::size_t k = 0; k < e.rows(); ++k) {
      const Vector gv = cosine_grad(v.att.features.row(k), t.att.features.row(k));
      const Vector gl = cosine_grad(t.att.features.row(k), v.att.features.row(k));
      for (std::size_t c = 0; c < e.cols(); ++c) {
        dfv(k, c) = -gv[c] / k_rows;
        dfl(k, c) = -gl[c] / k_rows;
      }
    }
    const double s = scale / layers;
    LayerProjection& dl = grad->d_layers[l];
    backward_branch(v, dfv, e, grad->d_e, dl.w_v, dl.b_v, s);
    backward_branch(t, dfl, e, grad->d_e, dl.w_t, dl.b_t, s);
  }
  return total / layers;
}

namespace {

void append(Vector& out, const Vector& v) { out.insert(out.end(), v.begin(), v.end()); }

void take(Vector& dst, const Vector& flat, std::size_t& pos) {
  if (pos + dst.size() > flat.size()) throw InvalidArgument("unflatten: vector too short");
  std::copy(flat.begin() + static_cast<std::ptrdiff_t>(pos),
            flat.begin() + static_cast<std::ptrdiff_t>(pos + dst.size()), dst.begin());
  pos += dst.size();
}

}  // namespace

Vector flatten(const MagParams& p) {
  Vector out;
  append(out, p.tokens->e.data());
  for (const LayerProjection& l : p.projections.layers) {
    append(out, l.w_v.data());
    append(out, l.b_v);
    append(out, l.w_t.data());
    append(out, l.b_t);
  }
  return out;
}

void unflatten(MagParams& p, const Vector& flat) {
  std::size_t pos = 0;
  take(p.tokens->e.data(), flat, pos);
  for (LayerProjection& l : p.projections.layers) {
    take(l.w_v.data(), flat, pos);
    take(l.b_v, flat, pos);
    take(l.w_t.data(), flat, pos);
    take(l.b_t, flat, pos);
  }
  if (pos != flat.size()) throw InvalidArgument("unflatten: vector too long");
}

Vector flatten(const MagGrad& g) {
  Vector out;
  append(out, g.d_e.data());
  for (const LayerProjection& l : g.d_layers) {
    append(out, l.w_v.data());
    append(out, l.b_v);
    append(out, l.w_t.data());
    append(out, l.b_t);
  }
  return out;
}

}  // namespace madtp::mag
