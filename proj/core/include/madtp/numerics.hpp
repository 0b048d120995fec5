// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

namespace madtp::numerics {

using Vector = std::vector<double>;

// Dense row-major matrix of doubles.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  Matrix(std::size_t rows, std::size_t cols, Vector data);

  static Matrix identity(std::size_t n);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  const Vector& data() const { return data_; }
  Vector& data() { return data_; }

  Matrix transposed() const;
  bool all_finite() const;

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  Vector data_;
};

// Non-negative weights summing to one (within 1e-9). Checked on construction.
class Distribution {
 public:
  explicit Distribution(Vector weights);

  const Vector& weights() const { return w_; }
  std::size_t size() const { return w_.size(); }
  double operator[](std::size_t i) const { return w_[i]; }

 private:
  Vector w_;
};

inline constexpr double kSimplexTolerance = 1e-9;

// a * b
Matrix matmul(const Matrix& a, const Matrix& b);
// a * b^T
Matrix matmul_bt(const Matrix& a, const Matrix& b);
// a^T * b
Matrix matmul_at(const Matrix& a, const Matrix& b);

Distribution softmax(std::span<const double> v);
Distribution sparsemax(std::span<const double> v);
// The tau of the sort-threshold rule; sparsemax(v)_i = max(v_i - tau, 0).
double sparsemax_tau(std::span<const double> v);
Vector sparsemax_vjp(std::span<const double> v, std::span<const double> upstream);

double cosine_similarity(std::span<const double> a, std::span<const double> b);

struct AttentionResult {
  Matrix output;
  Matrix attn;
};

// attn = row-softmax(Q K^T / scale), output = attn V.
AttentionResult scaled_dot_attention(const Matrix& queries, const Matrix& keys,
                                     const Matrix& values, double scale);

using ScalarFn = std::function<double(const Vector&)>;

// Central differences, one coordinate at a time.
Vector finite_diff_grad(const ScalarFn& f, const Vector& x, double eps);

}  // namespace madtp::numerics
