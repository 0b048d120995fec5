// SPDX-License-Identifier: Apache-2.0
#include "madtp/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>

#include "madtp/errors.hpp"

namespace madtp::numerics {

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, Vector data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows * cols) {
    throw InvalidArgument("matrix data length " + std::to_string(data_.size()) +
                          " != " + std::to_string(rows) + "x" + std::to_string(cols));
  }
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Matrix Matrix::transposed() const {
  Matrix t(cols_, rows_);
  for (std::size_t r = 0; r < rows_; ++r)
    for (std::size_t c = 0; c < cols_; ++c) t(c, r) = (*this)(r, c);
  return t;
}

bool Matrix::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double x) { return std::isfinite(x); });
}

Distribution::Distribution(Vector weights) : w_(std::move(weights)) {
  if (w_.empty()) throw InvalidArgument("distribution: empty");
  double s = 0.0;
  for (double x : w_) {
    if (!(x >= 0.0) || !std::isfinite(x)) throw InvalidArgument("distribution: negative or non-finite weight");
    s += x;
  }
  if (std::abs(s - 1.0) > kSimplexTolerance) {
    throw InvalidArgument("distribution: weights sum to " + std::to_string(s));
  }
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) throw InvalidArgument("matmul: inner dimension mismatch");
  Matrix c(a.rows(), b.cols());
  const std::size_t n = b.cols();
  for (std::size_t i = 0; i < a.rows(); ++i) {
    double* ci = c.row(i).data();
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      const double* bk = b.row(k).data();
      for (std::size_t j = 0; j < n; ++j) ci[j] += aik * bk[j];
    }
  }
  return c;
}

Matrix matmul_bt(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) throw InvalidArgument("matmul_bt: inner dimension mismatch");
  Matrix c(a.rows(), b.rows());
  const std::size_t d = a.cols();
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const double* ai = a.row(i).data();
    for (std::size_t j = 0; j < b.rows(); ++j) {
      const double* bj = b.row(j).data();
      double s = 0.0;
      for (std::size_t k = 0; k < d; ++k) s += ai[k] * bj[k];
      c(i, j) = s;
    }
  }
  return c;
}

Matrix matmul_at(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows()) throw InvalidArgument("matmul_at: inner dimension mismatch");
  Matrix c(a.cols(), b.cols());
  for (std::size_t k = 0; k < a.rows(); ++k) {
    const double* bk = b.row(k).data();
    for (std::size_t i = 0; i < a.cols(); ++i) {
      const double aki = a(k, i);
      double* ci = c.row(i).data();
      for (std::size_t j = 0; j < b.cols(); ++j) ci[j] += aki * bk[j];
    }
  }
  return c;
}

Distribution softmax(std::span<const double> v) {
  if (v.empty()) throw InvalidArgument("softmax: empty input");
  const double m = *std::max_element(v.begin(), v.end());
  Vector out(v.size());
  double s = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    out[i] = std::exp(v[i] - m);
    s += out[i];
  }
  for (double& x : out) x /= s;
  return Distribution(std::move(out));
}

namespace {

// tau for z = v - max(v). Shifting first makes a constant offset cancel exactly
// whenever v + c is representable.
double shifted_tau(const Vector& z) {
  Vector s = z;
  std::sort(s.begin(), s.end(), std::greater<>());
  double cs = 0.0, cs_k = 0.0;
  std::size_t k_sup = 1;
  for (std::size_t k = 1; k <= s.size(); ++k) {
    cs += s[k - 1];
    if (1.0 + static_cast<double>(k) * s[k - 1] > cs) {
      k_sup = k;
      cs_k = cs;
    }
  }
  return (cs_k - 1.0) / static_cast<double>(k_sup);
}

Vector shifted(std::span<const double> v, double& m) {
  if (v.empty()) throw InvalidArgument("sparsemax: empty input");
  m = *std::max_element(v.begin(), v.end());
  Vector z(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) z[i] = v[i] - m;
  return z;
}

}  // namespace

double sparsemax_tau(std::span<const double> v) {
  double m = 0.0;
  const Vector z = shifted(v, m);
  return shifted_tau(z) + m;
}

Distribution sparsemax(std::span<const double> v) {
  double m = 0.0;
  Vector z = shifted(v, m);
  const double tau = shifted_tau(z);
  for (double& x : z) x = std::max(x - tau, 0.0);
  return Distribution(std::move(z));
}

Vector sparsemax_vjp(std::span<const double> v, std::span<const double> upstream) {
  if (v.size() != upstream.size()) throw InvalidArgument("sparsemax_vjp: length mismatch");
  const Distribution p = sparsemax(v);
  double sum = 0.0;
  std::size_t support = 0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (p[i] > 0.0) {
      sum += upstream[i];
      ++support;
    }
  }
  const double mean = sum / static_cast<double>(support);
  Vector out(v.size(), 0.0);
  for (std::size_t i = 0; i < v.size(); ++i)
    if (p[i] > 0.0) out[i] = upstream[i] - mean;
  return out;
}

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw InvalidArgument("cosine_similarity: length mismatch");
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  if (aa == 0.0 || bb == 0.0) throw DegenerateInput("cosine_similarity: zero-norm vector");
  const double c = ab / (std::sqrt(aa) * std::sqrt(bb));
  return std::clamp(c, -1.0, 1.0);
}

AttentionResult scaled_dot_attention(const Matrix& queries, const Matrix& keys,
                                     const Matrix& values, double scale) {
  if (!(scale > 0.0)) throw InvalidArgument("scaled_dot_attention: scale must be positive");
  if (queries.cols() != keys.cols()) throw InvalidArgument("scaled_dot_attention: q/k width mismatch");
  if (keys.rows() != values.rows()) throw InvalidArgument("scaled_dot_attention: k/v length mismatch");
  if (keys.rows() == 0) throw InvalidArgument("scaled_dot_attention: no keys");
  Matrix logits = matmul_bt(queries, keys);
  Matrix attn(queries.rows(), keys.rows());
  for (std::size_t i = 0; i < queries.rows(); ++i) {
    auto lr = logits.row(i);
    for (double& x : lr) x /= scale;
    const Distribution p = softmax(lr);
    std::copy(p.weights().begin(), p.weights().end(), attn.row(i).begin());
  }
  return {matmul(attn, values), std::move(attn)};
}

Vector finite_diff_grad(const ScalarFn& f, const Vector& x, double eps) {
  if (!(eps > 0.0)) throw InvalidArgument("finite_diff_grad: eps must be positive");
  Vector g(x.size());
  Vector xp = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double xi = xp[i];
    xp[i] = xi + eps;
    const double fp = f(xp);
    xp[i] = xi - eps;
    const double fm = f(xp);
    xp[i] = xi;
    g[i] = (fp - fm) / (2.0 * eps);
  }
  return g;
}

}  // namespace madtp::numerics
