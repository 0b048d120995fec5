// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "madtp/config.hpp"

namespace madtp::harness {

struct Sample {
  Matrix image;  // patches x vision_input_dim
  Matrix text;   // words x language_input_dim
  bool matched = false;
  std::size_t concepts = 0;
  std::size_t distractors = 0;
  // Raw row indices; the token position is index + 1 after the special token.
  std::vector<std::size_t> vision_planted;
  std::vector<std::size_t> language_planted;
  std::vector<std::size_t> vision_distractors;
  std::vector<std::size_t> language_distractors;
};

struct Dataset {
  std::vector<Sample> samples;
};

// Concepts are drawn near the learnable-token directions in the shared space
// and mapped back to raw features through the layer-0 embedding and projection,
// so they are planted where MAG can see them.
Dataset gen_synthetic(const RunConfig& config, const vlt::Model& model, std::uint64_t seed);
Dataset gen_synthetic(const RunConfig& config, std::uint64_t seed);

// One line per sample: index, label, concept count, planted positions.
std::string ground_truth_tsv(const Dataset& d);

// Minimum-norm right inverse helper: returns pinv(a).
Matrix pseudo_inverse(const Matrix& a);

}  // namespace madtp::harness
