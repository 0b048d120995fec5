// SPDX-License-Identifier: Apache-2.0
#include "madtp/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "madtp/errors.hpp"

namespace madtp::harness {

using numerics::matmul;
using numerics::matmul_at;
using numerics::matmul_bt;

namespace {

// Cholesky solve of g x = b for symmetric positive definite g, column by column.
Matrix spd_solve(Matrix g, const Matrix& b) {
  const std::size_t n = g.rows();
  for (std::size_t j = 0; j < n; ++j) {
    double d = g(j, j);
    for (std::size_t k = 0; k < j; ++k) d -= g(j, k) * g(j, k);
    if (!(d > 0.0)) throw DegenerateInput("pseudo_inverse: matrix is rank deficient");
    g(j, j) = std::sqrt(d);
    for (std::size_t i = j + 1; i < n; ++i) {
      double s = g(i, j);
      for (std::size_t k = 0; k < j; ++k) s -= g(i, k) * g(j, k);
      g(i, j) = s / g(j, j);
    }
  }
  Matrix x = b;
  for (std::size_t c = 0; c < x.cols(); ++c) {
    for (std::size_t i = 0; i < n; ++i) {
      double s = x(i, c);
      for (std::size_t k = 0; k < i; ++k) s -= g(i, k) * x(k, c);
      x(i, c) = s / g(i, i);
    }
    for (std::size_t i = n; i-- > 0;) {
      double s = x(i, c);
      for (std::size_t k = i + 1; k < n; ++k) s -= g(k, i) * x(k, c);
      x(i, c) = s / g(i, i);
    }
  }
  return x;
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : g_(seed) {}
  double normal() { return n_(g_); }
  double uniform() { return u_(g_); }
  std::size_t below(std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(g_); }
  std::size_t between(std::size_t lo, std::size_t hi) {
    return std::uniform_int_distribution<std::size_t>(lo, hi)(g_);
  }

 private:
  std::mt19937_64 g_;
  std::normal_distribution<double> n_{0.0, 1.0};
  std::uniform_real_distribution<double> u_{0.0, 1.0};
};

Vector unit(Vector v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  s = std::sqrt(s);
  if (s > 0.0)
    for (double& x : v) x /= s;
  return v;
}

struct Planter {
  Matrix& rows;
  std::vector<bool> used;
  const DataConfig& cfg;
  Rng& rng;

  std::vector<std::size_t> put(std::size_t count, const Vector& direction) {
    std::vector<std::size_t> free;
    for (std::size_t i = 0; i < used.size(); ++i)
      if (!used[i]) free.push_back(i);
    if (free.size() < count) throw InvalidArgument("synthetic: not enough free positions");
    std::vector<std::size_t> picked;
    for (std::size_t j = 0; j < count; ++j) {
      const std::size_t k = j + rng.below(free.size() - j);
      std::swap(free[j], free[k]);
      picked.push_back(free[j]);
    }
    const Vector u = unit(direction);
    const double scale = cfg.amplitude * std::sqrt(static_cast<double>(rows.cols()));
    for (std::size_t p : picked) {
      used[p] = true;
      for (std::size_t c = 0; c < rows.cols(); ++c) rows(p, c) = scale * u[c] + cfg.noise * rng.normal();
    }
    return picked;
  }
};

Vector decode(const Vector& z, const Matrix& dec) {
  Vector out(dec.cols(), 0.0);
  for (std::size_t i = 0; i < dec.rows(); ++i)
    for (std::size_t c = 0; c < dec.cols(); ++c) out[c] += z[i] * dec(i, c);
  return out;
}

}  // namespace

Matrix pseudo_inverse(const Matrix& a) {
  if (a.rows() >= a.cols()) {
    // (A^T A)^-1 A^T
    return spd_solve(matmul_at(a, a), a.transposed());
  }
  // A^T (A A^T)^-1
  return spd_solve(matmul_bt(a, a), a).transposed();
}

Dataset gen_synthetic(const RunConfig& config, const vlt::Model& model, std::uint64_t seed) {
  const DataConfig& d = config.data;
  const vlt::VltConfig& mc = model.config;
  const Matrix& e = model.mag.tokens->e;
  const std::size_t dk = e.cols();
  // raw -> embed -> layer-0 projection is raw * (embed W^T); invert that map.
  const Matrix dec_v = pseudo_inverse(matmul_bt(model.weights.vision.embed, model.mag.projections.layers.at(0).w_v));
  const Matrix dec_l = pseudo_inverse(matmul_bt(model.weights.language.embed, model.mag.projections.layers.at(0).w_t));

  Rng rng(seed);
  auto near_token = [&](double sign) {
    const std::size_t k = rng.below(e.rows());
    Vector z = unit(Vector(e.row(k).begin(), e.row(k).end()));
    const double js = d.jitter / std::sqrt(static_cast<double>(dk));
    for (double& x : z) x = sign * x + js * rng.normal();
    return z;
  };

  Dataset out;
  for (std::size_t s = 0; s < d.size; ++s) {
    Sample smp;
    const bool empty = rng.uniform() < d.zero_fraction;
    smp.concepts = empty ? 0 : rng.between(d.concept_min, d.concept_max);
    smp.distractors = smp.concepts > 0 ? rng.between(0, d.distractor_max) : 0;
    smp.matched = smp.concepts > 0 && rng.uniform() < d.match_fraction;

    smp.image = Matrix(mc.patches, mc.vision_input_dim);
    smp.text = Matrix(mc.words, mc.language_input_dim);
    for (Matrix* m : {&smp.image, &smp.text}) {
      Vector bg(m->cols());
      for (double& x : bg) x = rng.normal();
      for (std::size_t r = 0; r < m->rows(); ++r)
        for (std::size_t c = 0; c < m->cols(); ++c) (*m)(r, c) = d.background * bg[c] + d.noise * rng.normal();
    }

    Planter pv{smp.image, std::vector<bool>(mc.patches, false), d, rng};
    Planter pl{smp.text, std::vector<bool>(mc.words, false), d, rng};
    for (std::size_t c = 0; c < smp.concepts; ++c) {
      const Vector z = near_token(1.0);
      const Vector zl = smp.matched ? z : near_token(1.0);
      for (std::size_t p : pv.put(d.patches_per_concept, decode(z, dec_v))) smp.vision_planted.push_back(p);
      for (std::size_t p : pl.put(d.words_per_concept, decode(zl, dec_l))) smp.language_planted.push_back(p);
    }
    for (std::size_t c = 0; c < smp.distractors; ++c) {
      Vector rv, rl;
      if (d.anti_aligned_distractors) {
        const Vector z = near_token(-1.0);
        rv = decode(z, dec_v);
        rl = decode(z, dec_l);
      } else {
        rv.resize(mc.vision_input_dim);
        rl.resize(mc.language_input_dim);
        for (double& x : rv) x = rng.normal();
        for (double& x : rl) x = rng.normal();
      }
      for (std::size_t p : pv.put(d.patches_per_concept, rv)) smp.vision_distractors.push_back(p);
      for (std::size_t p : pl.put(d.words_per_concept, rl)) smp.language_distractors.push_back(p);
    }
    std::sort(smp.vision_planted.begin(), smp.vision_planted.end());
    std::sort(smp.language_planted.begin(), smp.language_planted.end());
    std::sort(smp.vision_distractors.begin(), smp.vision_distractors.end());
    std::sort(smp.language_distractors.begin(), smp.language_distractors.end());
    out.samples.push_back(std::move(smp));
  }
  return out;
}

Dataset gen_synthetic(const RunConfig& config, std::uint64_t seed) {
  return gen_synthetic(config, vlt::build_model(config.model), seed);
}

namespace {

std::string join(const std::vector<std::size_t>& v) {
  if (v.empty()) return "-";
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += ',';
    s += std::to_string(v[i]);
  }
  return s;
}

}  // namespace

std::string ground_truth_tsv(const Dataset& d) {
  std::ostringstream os;
  os << "index\tmatched\tconcepts\tdistractors\tvision_planted\tlanguage_planted\tvision_distractors\t"
        "language_distractors\n";
  for (std::size_t i = 0; i < d.samples.size(); ++i) {
    const Sample& s = d.samples[i];
    os << i << '\t' << (s.matched ? 1 : 0) << '\t' << s.concepts << '\t' << s.distractors << '\t'
       << join(s.vision_planted) << '\t' << join(s.language_planted) << '\t' << join(s.vision_distractors)
       << '\t' << join(s.language_distractors) << '\n';
  }
  return os.str();
}

}  // namespace madtp::harness
