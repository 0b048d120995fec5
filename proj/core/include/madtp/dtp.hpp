// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <optional>
#include <string_view>
#include <vector>

#include "madtp/tokens.hpp"

namespace madtp::dtp {

enum class KeepPolicy { max_keep, mean_keep, per_instance };

std::string_view to_string(KeepPolicy p);
KeepPolicy keep_policy_from_string(std::string_view s);

// Which scores feed the TIS. Disabled ones are dropped from the average.
struct ScoreSwitches {
  bool cls = true;
  bool self = true;
  bool token = true;
};

struct TokenImportance {
  Vector s_cls;
  Vector s_self;
  Vector s_token;  // empty when no token attention is available
  Vector tis;
};

Vector class_attention_score(const Matrix& a_self, std::size_t cls_index);
Vector self_attention_score(const Matrix& a_self);
Vector token_attention_score(const Matrix& a_token);
Vector fuse_tis(const Vector& s_cls, const Vector& s_self, const Vector& s_token,
                ScoreSwitches switches = {});

// a_token may be null; S_token is then left out of the fusion.
TokenImportance importance(const Matrix& a_self, const Matrix* a_token, std::size_t cls_index,
                           ScoreSwitches switches = {});

Matrix sparse_token_attention(const Matrix& a_token, double temperature);
double threshold(const Matrix& a_hat, const Vector& tis);

struct Mask {
  std::vector<bool> keep;
  bool force_kept = false;
};

Mask prune_mask(const Vector& tis, double theta, const std::vector<std::size_t>& specials);

// TIS-weighted mean of the pruned rows; plain mean if every pruned weight is zero.
std::optional<Vector> merge_pruned(const Matrix& tokens, const Vector& tis,
                                   const std::vector<bool>& keep);

// Specials first, then TIS descending, ties by lowest index.
std::vector<std::size_t> keep_order(const Vector& tis, const std::vector<std::size_t>& specials);

std::size_t count_kept(const std::vector<bool>& keep);

std::vector<std::vector<bool>> apply_policy(const std::vector<std::vector<bool>>& masks,
                                            const std::vector<Vector>& tis,
                                            const std::vector<std::vector<std::size_t>>& specials,
                                            KeepPolicy policy);

enum class PruneMode {
  threshold,    // sparsemax threshold, merge, batch policy
  drop_lowest,  // drop a fixed number of lowest-TIS tokens, no merge, no policy
  keep_top,     // keep a fixed number of top-TIS tokens, merge the rest
};

struct PruneSettings {
  bool enabled = true;
  PruneMode mode = PruneMode::threshold;
  double temperature = 1.0;
  KeepPolicy policy = KeepPolicy::max_keep;
  ScoreSwitches scores;
  std::size_t count = 0;  // k for drop_lowest, kept total for keep_top
};

struct PruneDecision {
  double theta = 0.0;
  TokenImportance importance;
  std::vector<bool> own_mask;
  std::vector<bool> keep;
  bool force_kept = false;
  std::optional<Vector> merged;
  double merged_tis = 0.0;  // max TIS among the merged rows
  std::size_t own_count = 0;
  std::size_t kept_count = 0;
};

struct InstanceMaps {
  const Matrix* a_self = nullptr;
  const Matrix* a_token = nullptr;  // may be null
};

struct PruneResult {
  TokenBatch tokens;
  std::vector<PruneDecision> decisions;
};

PruneResult prune(const TokenBatch& tokens, const std::vector<InstanceMaps>& maps,
                  const PruneSettings& settings);

}  // namespace madtp::dtp
