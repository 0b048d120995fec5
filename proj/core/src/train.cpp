// SPDX-License-Identifier: Apache-2.0
#include "madtp/train.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include <nlohmann/json.hpp>

#include "madtp/errors.hpp"

namespace madtp::harness {

TrainCache build_cache(const vlt::Model& model, const Dataset& data, const vlt::DtpHandle& dtp) {
  TrainCache c;
  const std::size_t n = data.samples.size();
  // One batch: the mask policy sees the whole training set, as an epoch would.
  std::vector<Matrix> images, texts;
  for (const Sample& s : data.samples) {
    images.push_back(s.image);
    texts.push_back(s.text);
  }
  vlt::ForwardOptions opt;
  opt.keep_activations = true;
  vlt::ForwardResult f = vlt::model_forward(images, texts, model, dtp, opt);
  c.xv = std::move(f.vision_inputs);
  c.xl = std::move(f.language_inputs);
  for (std::size_t i = 0; i < n; ++i) {
    const Matrix& v = f.vision.instances[i].tokens;
    const Matrix& l = f.language.instances[i].tokens;
    Vector p(v.row(0).begin(), v.row(0).end());
    p.insert(p.end(), l.row(0).begin(), l.row(0).end());
    c.pooled.push_back(std::move(p));
    c.labels.push_back(data.samples[i].matched ? 1 : 0);
  }
  return c;
}

LossBreakdown objective(const mag::MagParams& mag, const TaskHead& head, const TrainCache& cache,
                        double alpha, TrainGrad* grad) {
  const std::size_t n = cache.pooled.size();
  if (n == 0) throw InvalidArgument("objective: empty cache");
  LossBreakdown lb;
  lb.alpha = alpha;
  const double inv_n = 1.0 / static_cast<double>(n);
  if (grad) {
    grad->mag = mag::zero_grad(mag);
    grad->d_w = Matrix(head.w.rows(), head.w.cols());
    grad->d_b = Vector(head.b.size(), 0.0);
  }
  for (std::size_t s = 0; s < n; ++s) {
    lb.l_sim += inv_n * mag::alignment_objective(mag, cache.xv[s], cache.xl[s], grad ? &grad->mag : nullptr,
                                                 alpha * inv_n);
    const Vector& x = cache.pooled[s];
    double z[2];
    for (std::size_t k = 0; k < 2; ++k) {
      z[k] = head.b[k];
      for (std::size_t j = 0; j < x.size(); ++j) z[k] += head.w(k, j) * x[j];
    }
    const double m = std::max(z[0], z[1]);
    const double lse = m + std::log(std::exp(z[0] - m) + std::exp(z[1] - m));
    const int y = cache.labels[s];
    lb.l_task += inv_n * (lse - z[y]);
    if (grad) {
      for (std::size_t k = 0; k < 2; ++k) {
        const double dz = (std::exp(z[k] - lse) - (static_cast<int>(k) == y ? 1.0 : 0.0)) * inv_n;
        grad->d_b[k] += dz;
        for (std::size_t j = 0; j < x.size(); ++j) grad->d_w(k, j) += dz * x[j];
      }
    }
  }
  lb.total = lb.l_task + alpha * lb.l_sim;
  return lb;
}

namespace {

Vector pack(const mag::MagParams& mag, const TaskHead& head) {
  Vector v = mag::flatten(mag);
  v.insert(v.end(), head.w.data().begin(), head.w.data().end());
  v.insert(v.end(), head.b.begin(), head.b.end());
  return v;
}

void unpack(const Vector& v, mag::MagParams& mag, TaskHead& head) {
  const std::size_t nh = head.w.data().size() + head.b.size();
  const std::size_t nm = v.size() - nh;
  mag::unflatten(mag, Vector(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(nm)));
  std::copy(v.begin() + static_cast<std::ptrdiff_t>(nm),
            v.begin() + static_cast<std::ptrdiff_t>(nm + head.w.data().size()), head.w.data().begin());
  std::copy(v.end() - static_cast<std::ptrdiff_t>(head.b.size()), v.end(), head.b.begin());
}

Vector pack(const TrainGrad& g) {
  Vector v = mag::flatten(g.mag);
  v.insert(v.end(), g.d_w.data().begin(), g.d_w.data().end());
  v.insert(v.end(), g.d_b.begin(), g.d_b.end());
  return v;
}

bool finite(const LossBreakdown& l) {
  return std::isfinite(l.l_task) && std::isfinite(l.l_sim) && std::isfinite(l.total);
}

void write_diagnostic(const std::string& dir, std::size_t step, const LossBreakdown& l, const Vector& params,
                      const std::string& cause) {
  if (dir.empty()) return;
  nlohmann::ordered_json j;
  j["step"] = step;
  j["cause"] = cause;
  j["l_task"] = std::isfinite(l.l_task) ? nlohmann::ordered_json(l.l_task) : nlohmann::ordered_json("non-finite");
  j["l_sim"] = std::isfinite(l.l_sim) ? nlohmann::ordered_json(l.l_sim) : nlohmann::ordered_json("non-finite");
  double norm = 0.0;
  std::size_t bad = 0;
  for (double x : params) {
    if (std::isfinite(x)) norm += x * x;
    else ++bad;
  }
  j["param_norm"] = std::sqrt(norm);
  j["non_finite_params"] = bad;
  std::ofstream out(dir + "/train_diagnostic.json");
  out << j.dump(2) << '\n';
}

}  // namespace

TrainResult run_train_toy(const RunConfig& config, const std::string& diag_dir) {
  validate(config, Mode::train_toy);
  vlt::Model model = vlt::build_model(config.model);
  const Dataset data = gen_synthetic(config, model, config.data.seed);
  const vlt::DtpHandle dtp = vlt::make_dtp_handle(model.config);
  const double alpha = config.model.alpha;

  TaskHead head{Matrix(2, config.model.vision_width + config.model.language_width), Vector(2, 0.0)};
  Vector theta = pack(model.mag, head);
  Vector m(theta.size(), 0.0), v(theta.size(), 0.0);
  constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  const double lr = config.train.learning_rate;

  TrainResult res;
  for (std::size_t step = 0;; ++step) {
    auto diverged = [&](const LossBreakdown& lb, const std::string& cause) {
      write_diagnostic(diag_dir, step, lb, theta, cause);
      return NonFiniteLoss("train-toy: " + cause + " at step " + std::to_string(step) +
                           (diag_dir.empty() ? "" : " (state written to " + diag_dir + "/train_diagnostic.json)"));
    };
    TrainGrad g;
    LossBreakdown lb;
    try {
      const TrainCache cache = build_cache(model, data, dtp);
      lb = objective(model.mag, head, cache, alpha, &g);
    } catch (const Error& e) {
      // Step 0 runs on validated inputs; later failures come from the updates overflowing.
      if (step == 0) throw;
      lb.l_task = lb.l_sim = lb.total = std::numeric_limits<double>::quiet_NaN();
      throw diverged(lb, std::string("numeric failure (") + e.what() + ")");
    }
    if (!finite(lb)) throw diverged(lb, "non-finite loss");
    res.curve.push_back(lb);
    if (step == config.train.steps) break;
    const Vector grad = pack(g);
    const double t = static_cast<double>(step + 1);
    for (std::size_t i = 0; i < theta.size(); ++i) {
      m[i] = b1 * m[i] + (1.0 - b1) * grad[i];
      v[i] = b2 * v[i] + (1.0 - b2) * grad[i] * grad[i];
      const double mh = m[i] / (1.0 - std::pow(b1, t));
      const double vh = v[i] / (1.0 - std::pow(b2, t));
      theta[i] -= lr * mh / (std::sqrt(vh) + eps);
    }
    unpack(theta, model.mag, head);
  }
  res.mag = model.mag;
  res.head = std::move(head);
  return res;
}

std::string loss_curve_tsv(const TrainResult& r) {
  std::ostringstream os;
  os << "step\tl_task\tl_sim\talpha\ttotal\n";
  for (std::size_t i = 0; i < r.curve.size(); ++i) {
    const LossBreakdown& l = r.curve[i];
    os << i << '\t' << format_number(l.l_task) << '\t' << format_number(l.l_sim) << '\t' << format_number(l.alpha)
       << '\t' << format_number(l.total) << '\n';
  }
  return os.str();
}

}  // namespace madtp::harness
