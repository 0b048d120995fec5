// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <string>
#include <vector>

#include "madtp/budget.hpp"
#include "madtp/config.hpp"
#include "madtp/dump.hpp"
#include "madtp/synthetic.hpp"
#include "madtp/vlt.hpp"

namespace madtp::harness {

// Forwards the dataset in batches (grouped by difficulty when run.sorted is set)
// and returns a report with instances in dataset order.
PruneReport simulate(const RunConfig& config, const vlt::Model& model, const Dataset& data,
                     const vlt::DtpHandle& dtp);

// simulate() at config temperature.
PruneReport simulate(const RunConfig& config, const vlt::Model& model, const Dataset& data);

struct SimulateOutput {
  PruneReport report;
  std::vector<std::string> files;
};

// Full run: generate, forward, write report.txt, report.json, density.tsv,
// ground_truth.tsv, attention.dmp and mask renderings under out_dir.
SimulateOutput run_simulate(const RunConfig& config, const std::string& out_dir);

struct CalibrationResult {
  bool converged = false;
  std::size_t iterations = 0;  // simulate passes used
  double temperature = 0.0;    // temperature of the accepted pass
  double measured = 0.0;
  budget::BudgetState state;
};

CalibrationResult run_calibrate(const RunConfig& config, const vlt::Model& model, const Dataset& data,
                                double target_ratio);
CalibrationResult run_calibrate(const RunConfig& config, double target_ratio);

std::string calibration_trace(const CalibrationResult& r);

// Drops k lowest-TIS content tokens per layer and branch; counts[layer][branch]
// overrides k when non-empty.
PruneReport run_stp_baseline(const RunConfig& config, const vlt::Model& model, const Dataset& data,
                             std::size_t k, const std::vector<std::array<std::size_t, 2>>& counts = {});
PruneReport run_stp_baseline(const RunConfig& config, std::size_t k);

// Report with config echo and decision ledger filled in.
PruneReport annotate(PruneReport r, const RunConfig& config);

// Per-layer drop counts that make STP's kept counts track a MADTP run's
// dataset-average kept counts.
std::vector<std::array<std::size_t, 2>> matched_stp_counts(const PruneReport& madtp, std::size_t layers);

}  // namespace madtp::harness
