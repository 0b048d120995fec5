// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <memory>
#include <vector>

#include "madtp/tokens.hpp"

namespace madtp::mag {

struct LearnableTokens {
  Matrix e;  // K x d_k
};

// W is d_k x width; applied to row tokens as X W^T + b.
struct LayerProjection {
  Matrix w_v;
  Vector b_v;
  Matrix w_t;
  Vector b_t;
};

struct ProjectionWeights {
  std::vector<LayerProjection> layers;
};

Matrix project(const Matrix& tokens, const Matrix& w, const Vector& b);
Matrix project(const Matrix& tokens, Modality m, std::size_t layer, const ProjectionWeights& weights);

struct TokenAttention {
  Matrix a_token;   // K x n
  Matrix features;  // K x d_k
};

TokenAttention token_attention(const LearnableTokens& tokens, const Matrix& mapped);

double alignment_loss(const Matrix& ev, const Matrix& el);

// Everything MAG owns. The learnable tokens are one object shared by every
// layer and both branches.
struct MagParams {
  std::shared_ptr<LearnableTokens> tokens;
  ProjectionWeights projections;
};

struct MagGrad {
  Matrix d_e;
  std::vector<LayerProjection> d_layers;
};

MagGrad zero_grad(const MagParams& p);

// Mean over layers of the alignment loss, with xv[l], xl[l] the token matrices
// MAG reads at layer l. Accumulates scale * gradient into grad when non-null.
double alignment_objective(const MagParams& p, const std::vector<Matrix>& xv,
                           const std::vector<Matrix>& xl, MagGrad* grad, double scale = 1.0);

// Flat parameter view for optimizers and finite differences: E, then per layer
// w_v, b_v, w_t, b_t.
Vector flatten(const MagParams& p);
void unflatten(MagParams& p, const Vector& flat);
Vector flatten(const MagGrad& g);

}  // namespace madtp::mag
