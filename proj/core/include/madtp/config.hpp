// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "madtp/vlt.hpp"

namespace madtp::harness {

enum class Mode { simulate, calibrate, stp, ingest, train_toy, report };

std::string_view to_string(Mode m);

// Planted-concept generator knobs.
struct DataConfig {
  std::size_t size = 128;
  std::uint64_t seed = 1;
  std::size_t concept_min = 1;
  std::size_t concept_max = 3;
  double zero_fraction = 0.25;  // share of pairs with no concepts
  double match_fraction = 0.5;
  std::size_t distractor_max = 2;
  bool anti_aligned_distractors = true;
  double amplitude = 1.0;
  double background = 1.0;
  double noise = 0.03;
  double jitter = 1.0;
  std::size_t patches_per_concept = 2;
  std::size_t words_per_concept = 2;
};

struct RunSettings {
  std::size_t batch_size = 32;
  std::string out_dir = "out";
  std::size_t stp_k = 0;
  bool sorted = false;
  std::size_t render_samples = 4;
  std::size_t dump_instances = 1;
  std::size_t max_iterations = 50;
  double tolerance = 0.05;
  double eta = 0.5;
  double t_min = 1e-3;
  double t_max = 1e3;
};

struct TrainConfig {
  std::size_t steps = 200;
  double learning_rate = 0.02;
};

struct RunConfig {
  static constexpr int kSchemaVersion = 1;

  vlt::VltConfig model;
  DataConfig data;
  RunSettings run;
  TrainConfig train;
};

// The desk-scale defaults: L=4, N=64, M=16, d=64.
RunConfig default_config();

RunConfig parse_config(std::string_view json_text);
RunConfig load_config(const std::string& path);
std::string config_to_json(const RunConfig& c);

void validate(const RunConfig& c, Mode mode);

// Flattened key/value echo in a fixed order, for reports.
std::vector<std::pair<std::string, std::string>> config_echo(const RunConfig& c);

std::string format_number(double x);

}  // namespace madtp::harness
