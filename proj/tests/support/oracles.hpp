// SPDX-License-Identifier: Apache-2.0
// Independent reference implementations used only by tests.
#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <vector>

#include "madtp/numerics.hpp"

namespace madtp::oracle {

using numerics::Matrix;
using numerics::Vector;

// Simplex projection by Michelot's active-set iteration; no sorting.
Vector simplex_projection(const Vector& v);

// Checks the KKT conditions of the projection QP at p (tolerance tol).
bool simplex_kkt(const Vector& v, const Vector& p, double tol);

// Triple-loop softmax(QK^T/scale) V.
void naive_attention(const Matrix& q, const Matrix& k, const Matrix& v, double scale, Matrix& out, Matrix& attn);

// Multiply-accumulates of one pre-norm block, counted matmul by matmul.
double enumerate_block_macs(std::size_t n_in, std::size_t n_out, std::size_t d, std::size_t ffn_mult);

// Straight-line evaluation of scores, threshold, mask and merge for one
// instance with the special token at 0.
struct PipelineResult {
  Vector tis;
  double theta = 0.0;
  std::vector<bool> keep;
  std::optional<Vector> merged;
};

PipelineResult prune_pipeline(const Matrix& a_self, const Matrix& a_token, double temperature,
                              const Matrix& tokens);

// Sparsemax by trying every support set; exact tau for the winning support.
Vector sparsemax_by_enumeration(const Vector& z);

// One-sided sign test: P(X >= wins) for X ~ Bin(wins + losses, 1/2).
double sign_test_p(std::size_t wins, std::size_t losses);

Matrix random_matrix(std::mt19937_64& g, std::size_t r, std::size_t c, double sd = 1.0);
Matrix random_stochastic(std::mt19937_64& g, std::size_t r, std::size_t c, double sharpness = 1.0);

}  // namespace madtp::oracle
