// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "madtp/config.hpp"
#include "madtp/mag.hpp"
#include "madtp/synthetic.hpp"
#include "madtp/vlt.hpp"

namespace madtp::harness {

struct LossBreakdown {
  double l_task = 0.0;
  double l_sim = 0.0;
  double alpha = 0.0;
  double total = 0.0;  // l_task + alpha * l_sim
};

// Linear matched/unmatched head on [vision CLS, language EOS].
struct TaskHead {
  Matrix w;  // 2 x (d_v + d_l)
  Vector b;  // 2
};

// Activations from one forward pass, held fixed while the loss is differentiated.
// The prune mask is discrete and enters only through these.
struct TrainCache {
  std::vector<std::vector<Matrix>> xv;  // [sample][layer]
  std::vector<std::vector<Matrix>> xl;
  std::vector<Vector> pooled;           // CLS then EOS output
  std::vector<int> labels;
};

TrainCache build_cache(const vlt::Model& model, const Dataset& data, const vlt::DtpHandle& dtp);

struct TrainGrad {
  mag::MagGrad mag;
  Matrix d_w;
  Vector d_b;
};

LossBreakdown objective(const mag::MagParams& mag, const TaskHead& head, const TrainCache& cache,
                        double alpha, TrainGrad* grad);

struct TrainResult {
  std::vector<LossBreakdown> curve;  // entry 0 is the initial state
  mag::MagParams mag;
  TaskHead head;
};

// Adam on E, projections and the head. diag_dir receives a state dump if the
// loss goes non-finite (empty: no file).
TrainResult run_train_toy(const RunConfig& config, const std::string& diag_dir = "");

std::string loss_curve_tsv(const TrainResult& r);

}  // namespace madtp::harness
