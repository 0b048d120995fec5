// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string_view>
#include <vector>

#include "madtp/budget.hpp"
#include "madtp/dtp.hpp"
#include "madtp/mag.hpp"
#include "madtp/report.hpp"

namespace madtp::vlt {

enum class ModalityScope { vision, language, both };

std::string_view to_string(ModalityScope s);
ModalityScope scope_from_string(std::string_view s);

struct VltConfig {
  std::size_t layers = 4;
  std::size_t vision_width = 64;
  std::size_t language_width = 64;
  std::size_t heads = 4;
  std::size_t patches = 64;
  std::size_t words = 16;
  std::size_t vision_input_dim = 64;
  std::size_t language_input_dim = 64;
  std::size_t learnable_tokens = 100;
  std::size_t token_width = 768;
  double alpha = 0.1;
  double temperature = 1.0;
  double target_ratio = 0.0;
  std::size_t ffn_mult = 4;
  std::uint64_t seed = 0;
  bool pruning = true;
  dtp::KeepPolicy keep_policy = dtp::KeepPolicy::max_keep;
  bool cross_attention = false;
  ModalityScope scope = ModalityScope::both;
  dtp::ScoreSwitches scores;
  bool include_overhead = false;

  // Init scales: q/k std is qk_gain/sqrt(width), E std is token_gain/sqrt(d_k).
  double qk_gain = 1.0;
  double special_std = 1.0;
  double token_gain = 1.0;

  void validate() const;
  std::size_t width(Modality m) const { return m == Modality::vision ? vision_width : language_width; }
  std::size_t input_dim(Modality m) const {
    return m == Modality::vision ? vision_input_dim : language_input_dim;
  }
  std::size_t length(Modality m) const { return m == Modality::vision ? patches : words; }
};

budget::FlopsModel flops_model(const VltConfig& c);

struct LayerNormParams {
  Vector gamma;
  Vector beta;
};

// Row tokens times W, W stored in x out.
struct AttentionWeights {
  Matrix wq, wk, wv, wo;
};

struct FfnWeights {
  Matrix w1;
  Vector b1;
  Matrix w2;
  Vector b2;
};

// Language queries attending onto vision context.
struct CrossWeights {
  LayerNormParams ln;
  Matrix wq;  // d_l x d_l
  Matrix wk;  // d_v x d_l
  Matrix wv;  // d_v x d_l
  Matrix wo;  // d_l x d_l
};

struct BlockWeights {
  LayerNormParams ln1;
  AttentionWeights attn;
  LayerNormParams ln2;
  FfnWeights ffn;
  std::optional<CrossWeights> cross;
};

struct BranchWeights {
  Matrix embed;  // input_dim x width
  Vector embed_bias;
  Vector special;
  std::vector<BlockWeights> blocks;
};

struct ModelWeights {
  BranchWeights vision;
  BranchWeights language;

  const BranchWeights& branch(Modality m) const { return m == Modality::vision ? vision : language; }
};

struct Model {
  VltConfig config;
  ModelWeights weights;
  mag::MagParams mag;
};

// Deterministic in config.seed.
Model build_model(const VltConfig& config);

Matrix layer_norm(const Matrix& x, const LayerNormParams& p);
double gelu(double x);

TokenBatch tokenize(const std::vector<Matrix>& raw, Modality m, const BranchWeights& w,
                    const VltConfig& config);

struct MhsaResult {
  Matrix out;
  Matrix attn;                    // head-averaged
  std::vector<Matrix> head_attn;  // per head
};

MhsaResult mhsa_forward(const Matrix& x, const LayerNormParams& ln, const AttentionWeights& w,
                        std::size_t heads);
Matrix ffn_forward(const Matrix& x, const LayerNormParams& ln, const FfnWeights& w);
Matrix cross_attention_forward(const Matrix& queries, const Matrix& context,
                               const std::optional<CrossWeights>& w, bool enabled);

// Batch-level wrappers.
std::pair<TokenBatch, std::vector<Matrix>> mhsa_forward(const TokenBatch& b, const BlockWeights& w,
                                                        std::size_t heads);
TokenBatch ffn_forward(const TokenBatch& b, const BlockWeights& w);

struct MagHandle {
  const mag::MagParams* params = nullptr;
};

// Per-layer pruning settings. For fixed-count modes, counts[layer][branch]
// overrides settings.count when present.
struct DtpHandle {
  dtp::PruneSettings settings;
  bool vision = true;
  bool language = true;
  std::vector<std::array<std::size_t, 2>> counts;

  dtp::PruneSettings for_layer(std::size_t layer, Modality m) const;
};

DtpHandle make_dtp_handle(const VltConfig& c);

struct AlignmentRecord {
  std::size_t layer = 0;
  const mag::LearnableTokens* tokens = nullptr;  // which E served this layer
  Matrix ev;
  Matrix el;
  double l_sim = 0.0;
};

struct BlockOutput {
  TokenBatch tokens;
  std::vector<LayerRecord> records;         // per instance
  std::vector<Matrix> mag_inputs;           // per instance, tokens MAG read
  std::vector<mag::TokenAttention> token_attn;
  std::vector<Matrix> a_self;
};

BlockOutput block_forward(const TokenBatch& tokens, const BlockWeights& w, std::size_t layer,
                          const VltConfig& config, const MagHandle& mag, const DtpHandle& dtp,
                          const TokenBatch* context);

struct ForwardOptions {
  bool keep_activations = false;  // MAG inputs per layer, for training
  bool keep_maps = false;         // A_self and A_token per layer, for dumps
};

struct LayerMaps {
  std::size_t layer = 0;
  Modality branch = Modality::vision;
  Matrix a_self;
  Matrix a_token;
};

struct ForwardResult {
  TokenBatch vision;
  TokenBatch language;
  std::vector<std::vector<AlignmentRecord>> alignment;  // [instance][layer]
  PruneReport report;
  std::vector<std::vector<Matrix>> vision_inputs;    // [instance][layer]
  std::vector<std::vector<Matrix>> language_inputs;  // [instance][layer]
  std::vector<std::vector<LayerMaps>> maps;          // [instance][layer*2 + branch]
};

ForwardResult model_forward(const std::vector<Matrix>& images, const std::vector<Matrix>& texts,
                            const Model& model, const DtpHandle& dtp,
                            const ForwardOptions& options = {});

}  // namespace madtp::vlt
