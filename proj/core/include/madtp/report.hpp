// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <iosfwd>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "madtp/tokens.hpp"

namespace madtp {

inline constexpr const char* kFlopsConvention = "flops=2*MAC; softmax/norm excluded";

// One branch of one layer for one instance.
struct LayerRecord {
  std::size_t layer = 0;
  Modality branch = Modality::vision;
  std::size_t tokens_in = 0;
  std::size_t own_count = 0;    // kept by the instance's own mask, before the batch policy
  std::size_t kept_count = 0;   // kept after the policy, merged token excluded
  std::size_t tokens_out = 0;   // kept_count plus one if a merged token was appended
  std::size_t context = 0;      // vision tokens seen by cross attention, 0 if none
  double theta = 0.0;
  double tis_sum = 0.0;
  double tis_min = 0.0;
  double tis_max = 0.0;
  double merged_tis = 0.0;
  bool merged = false;
  bool force_kept = false;
  double gflops = 0.0;
  std::vector<int> kept_origins;  // one per output row

  friend bool operator==(const LayerRecord&, const LayerRecord&) = default;
};

struct InstanceTrace {
  std::size_t index = 0;
  std::size_t difficulty = 0;
  double gflops = 0.0;
  std::vector<LayerRecord> layers;  // layer-major, vision before language

  friend bool operator==(const InstanceTrace&, const InstanceTrace&) = default;
};

struct PruneReport {
  static constexpr int kVersion = 1;

  std::string flops_convention = kFlopsConvention;
  std::vector<std::pair<std::string, std::string>> config;
  std::vector<std::string> decisions;
  double baseline_gflops = 0.0;
  double dataset_average_gflops = 0.0;
  double reduce_ratio = 0.0;
  std::vector<InstanceTrace> instances;

  friend bool operator==(const PruneReport&, const PruneReport&) = default;
};

// Line-based, versioned, stable key order, %.17g numbers.
std::string to_text(const PruneReport& r);
PruneReport parse_text(std::string_view text);
std::string to_json(const PruneReport& r);

void write_report(const PruneReport& r, const std::string& path);
PruneReport read_report(const std::string& path);

// The resolved choices echoed into every report.
std::vector<std::string> default_decisions();

}  // namespace madtp
