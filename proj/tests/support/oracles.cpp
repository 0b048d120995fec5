// SPDX-License-Identifier: Apache-2.0
#include "oracles.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

namespace madtp::oracle {

Vector simplex_projection(const Vector& v) {
  const std::size_t n = v.size();
  std::vector<bool> active(n, true);
  Vector p(n, 0.0);
  for (;;) {
    double s = 0.0;
    std::size_t k = 0;
    for (std::size_t i = 0; i < n; ++i)
      if (active[i]) {
        s += v[i];
        ++k;
      }
    const double tau = (s - 1.0) / static_cast<double>(k);
    bool changed = false;
    for (std::size_t i = 0; i < n; ++i) {
      if (!active[i]) continue;
      if (v[i] - tau <= 0.0) {
        active[i] = false;
        changed = true;
      }
    }
    if (!changed) {
      for (std::size_t i = 0; i < n; ++i) p[i] = active[i] ? v[i] - tau : 0.0;
      return p;
    }
  }
}

bool simplex_kkt(const Vector& v, const Vector& p, double tol) {
  double s = 0.0;
  for (double x : p) {
    if (x < -tol) return false;
    s += x;
  }
  if (std::abs(s - 1.0) > tol) return false;
  // Stationarity: p_i - v_i + tau = mu_i with mu_i >= 0, mu_i p_i = 0.
  double tau = 0.0;
  std::size_t k = 0;
  for (std::size_t i = 0; i < v.size(); ++i)
    if (p[i] > tol) {
      tau += v[i] - p[i];
      ++k;
    }
  if (k == 0) return false;
  tau /= static_cast<double>(k);
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double mu = p[i] - v[i] + tau;
    if (p[i] > tol && std::abs(mu) > tol) return false;
    if (p[i] <= tol && mu < -tol) return false;
  }
  return true;
}

void naive_attention(const Matrix& q, const Matrix& k, const Matrix& v, double scale, Matrix& out, Matrix& attn) {
  attn = Matrix(q.rows(), k.rows());
  out = Matrix(q.rows(), v.cols());
  for (std::size_t i = 0; i < q.rows(); ++i) {
    std::vector<long double> logits(k.rows());
    long double mx = -INFINITY;
    for (std::size_t j = 0; j < k.rows(); ++j) {
      long double s = 0;
      for (std::size_t c = 0; c < q.cols(); ++c) s += static_cast<long double>(q(i, c)) * k(j, c);
      logits[j] = s / scale;
      mx = std::max(mx, logits[j]);
    }
    long double z = 0;
    for (std::size_t j = 0; j < k.rows(); ++j) z += std::exp(logits[j] - mx);
    for (std::size_t j = 0; j < k.rows(); ++j) attn(i, j) = static_cast<double>(std::exp(logits[j] - mx) / z);
    for (std::size_t c = 0; c < v.cols(); ++c) {
      long double s = 0;
      for (std::size_t j = 0; j < k.rows(); ++j) s += static_cast<long double>(attn(i, j)) * v(j, c);
      out(i, c) = static_cast<double>(s);
    }
  }
}

double enumerate_block_macs(std::size_t n_in, std::size_t n_out, std::size_t d, std::size_t ffn_mult) {
  struct Mm {
    std::size_t m, k, n;
  };
  const std::size_t h = ffn_mult * d;
  const std::vector<Mm> mms = {
      {n_in, d, d},      // Q
      {n_in, d, d},      // K
      {n_in, d, d},      // V
      {n_in, d, n_in},   // Q K^T, summed over heads
      {n_in, n_in, d},   // A V, summed over heads
      {n_in, d, d},      // output projection
      {n_out, d, h},     // FFN up
      {n_out, h, d},     // FFN down
  };
  double macs = 0.0;
  for (const Mm& m : mms) macs += static_cast<double>(m.m) * static_cast<double>(m.k) * static_cast<double>(m.n);
  return macs;
}

Vector sparsemax_by_enumeration(const Vector& z) {
  const std::size_t n = z.size();
  for (std::uint32_t mask = 1; mask < (1u << n); ++mask) {
    // tau from the support values summed largest first.
    Vector sup;
    for (std::size_t i = 0; i < n; ++i)
      if (mask & (1u << i)) sup.push_back(z[i]);
    const double m = *std::max_element(z.begin(), z.end());
    std::sort(sup.begin(), sup.end(), std::greater<>());
    double cs = 0.0;
    for (double x : sup) cs += x - m;
    const double tau = (cs - 1.0) / static_cast<double>(sup.size());
    bool ok = true;
    for (std::size_t i = 0; i < n && ok; ++i) {
      const bool in = mask & (1u << i);
      const double r = (z[i] - m) - tau;
      ok = in ? r > 0.0 : r <= 0.0;
    }
    if (!ok) continue;
    Vector p(n);
    for (std::size_t i = 0; i < n; ++i) p[i] = std::max((z[i] - m) - tau, 0.0);
    return p;
  }
  // Rounding left no consistent support; fall back to the iterative projection.
  return simplex_projection(z);
}

namespace {

Vector normalize(Vector v) {
  double s = 0.0;
  for (double x : v) s += x;
  for (double& x : v) x /= s;
  return v;
}

}  // namespace

PipelineResult prune_pipeline(const Matrix& a_self, const Matrix& a_token, double temperature,
                              const Matrix& tokens) {
  const std::size_t n = a_self.rows();
  PipelineResult r;
  Vector s_cls(a_self.row(0).begin(), a_self.row(0).end());
  s_cls = normalize(s_cls);
  Vector s_self(n, 0.0), s_token(n, 0.0);
  for (std::size_t j = 0; j < n; ++j) {
    double m = a_self(0, j);
    for (std::size_t i = 1; i < n; ++i) m = std::max(m, a_self(i, j));
    s_self[j] = m;
    double t = a_token(0, j);
    for (std::size_t k = 1; k < a_token.rows(); ++k) t = std::max(t, a_token(k, j));
    s_token[j] = t;
  }
  s_self = normalize(s_self);
  s_token = normalize(s_token);
  r.tis.resize(n);
  for (std::size_t j = 0; j < n; ++j) r.tis[j] = (s_cls[j] + s_self[j] + s_token[j]) / 3.0;

  r.theta = INFINITY;
  for (std::size_t k = 0; k < a_token.rows(); ++k) {
    Vector z(n);
    for (std::size_t j = 0; j < n; ++j) z[j] = temperature * a_token(k, j);
    const Vector p = sparsemax_by_enumeration(z);
    double t = 0.0;
    for (std::size_t j = 0; j < n; ++j) t += p[j] * r.tis[j];
    r.theta = std::min(r.theta, t);
  }
  const double lo = *std::min_element(r.tis.begin(), r.tis.end());
  const double hi = *std::max_element(r.tis.begin(), r.tis.end());
  r.theta = std::min(std::max(r.theta, lo), hi);

  r.keep.assign(n, false);
  r.keep[0] = true;
  bool any = false;
  for (std::size_t j = 1; j < n; ++j) {
    r.keep[j] = r.tis[j] > r.theta;
    any = any || r.keep[j];
  }
  if (!any && n > 1) {
    std::size_t best = 1;
    for (std::size_t j = 2; j < n; ++j)
      if (r.tis[j] > r.tis[best]) best = j;
    r.keep[best] = true;
  }

  double w = 0.0;
  std::size_t pruned = 0;
  for (std::size_t j = 0; j < n; ++j)
    if (!r.keep[j]) {
      w += r.tis[j];
      ++pruned;
    }
  if (pruned > 0) {
    Vector m(tokens.cols(), 0.0);
    for (std::size_t j = 0; j < n; ++j) {
      if (r.keep[j]) continue;
      for (std::size_t c = 0; c < tokens.cols(); ++c) m[c] += (w > 0.0 ? r.tis[j] : 1.0) * tokens(j, c);
    }
    for (double& x : m) x /= (w > 0.0 ? w : static_cast<double>(pruned));
    r.merged = m;
  }
  return r;
}

double sign_test_p(std::size_t wins, std::size_t losses) {
  const std::size_t n = wins + losses;
  if (n == 0) return 1.0;
  double p = 0.0;
  for (std::size_t k = wins; k <= n; ++k) {
    const double lc = std::lgamma(static_cast<double>(n) + 1) - std::lgamma(static_cast<double>(k) + 1) -
                      std::lgamma(static_cast<double>(n - k) + 1);
    p += std::exp(lc - static_cast<double>(n) * std::log(2.0));
  }
  return std::min(1.0, p);
}

Matrix random_matrix(std::mt19937_64& g, std::size_t r, std::size_t c, double sd) {
  std::normal_distribution<double> n(0.0, sd);
  Matrix m(r, c);
  for (double& x : m.data()) x = n(g);
  return m;
}

Matrix random_stochastic(std::mt19937_64& g, std::size_t r, std::size_t c, double sharpness) {
  Matrix m = random_matrix(g, r, c, sharpness);
  for (std::size_t i = 0; i < r; ++i) {
    const numerics::Distribution p = numerics::softmax(m.row(i));
    std::copy(p.weights().begin(), p.weights().end(), m.row(i).begin());
  }
  return m;
}

}  // namespace madtp::oracle
