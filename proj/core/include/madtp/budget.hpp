// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "madtp/report.hpp"

namespace madtp::budget {

// Counts in the units of the conventional ViT-B/16 "17.6 GFLOPs" figure.
struct FlopsModel {
  std::size_t vision_width = 64;
  std::size_t language_width = 64;
  std::size_t heads = 4;
  std::size_t ffn_mult = 4;
  std::size_t layers = 4;
  std::size_t patches = 64;
  std::size_t words = 16;
  std::size_t vision_input_dim = 64;
  std::size_t language_input_dim = 64;
  std::size_t learnable_tokens = 1;
  std::size_t token_width = 32;
  bool cross_attention = false;
  bool include_overhead = false;  // count MAG projections and token attention
  double head_flops = 0.0;        // fixed per-pair cost after the last layer

  void validate() const;
};

double attention_flops(double n, double d);
double ffn_flops(double n, double d, std::size_t ffn_mult);
double cross_attention_flops(double n_query, double n_context, double d_query, double d_context);
double mag_overhead_flops(double n, double d, std::size_t k, std::size_t d_k);

// 4nd^2 + 2n^2d + 2*ffn_mult*nd^2.
double block_flops(double n, double d, std::size_t heads, std::size_t ffn_mult);

double embedding_flops(const FlopsModel& m);

// Attention at the pre-pruning count, FFN at the post-pruning count.
double layer_flops(const LayerRecord& rec, const FlopsModel& m);

// GFLOPs for one image-text pair, recomputed from per-layer counts.
double model_flops(const InstanceTrace& trace, const FlopsModel& m);
double baseline_gflops(const FlopsModel& m);

double dataset_average_flops(std::span<const double> per_pair);

struct BudgetEntry {
  std::size_t epoch = 0;
  double measured = 0.0;
  double temperature = 0.0;
};

struct BudgetState {
  double target_ratio = 0.0;
  double baseline = 0.0;
  double target = 0.0;  // (1 - r) * baseline
  double temperature = 1.0;
  double eta = 0.5;
  double t_min = 1e-3;
  double t_max = 1e3;
  std::vector<BudgetEntry> history;
};

BudgetState make_budget(double target_ratio, double baseline, double temperature,
                        double eta = 0.5, double t_min = 1e-3, double t_max = 1e3);

// T <- clamp(T * (measured / target)^eta).
BudgetState adjust_temperature(BudgetState state, double measured);

}  // namespace madtp::budget
