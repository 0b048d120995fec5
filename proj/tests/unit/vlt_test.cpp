// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "madtp/errors.hpp"
#include "madtp/vlt.hpp"
#include "oracles.hpp"

namespace madtp::vlt {
namespace {

VltConfig small() {
  VltConfig c;
  c.layers = 3;
  c.vision_width = c.language_width = 16;
  c.heads = 2;
  c.patches = 9;
  c.words = 5;
  c.vision_input_dim = c.language_input_dim = 8;
  c.learnable_tokens = 2;
  c.token_width = 8;
  c.temperature = 3.0;
  c.seed = 5;
  return c;
}

struct Inputs {
  std::vector<Matrix> images, texts;
};

Inputs inputs(const VltConfig& c, std::size_t b, std::uint64_t seed) {
  std::mt19937_64 g(seed);
  Inputs in;
  for (std::size_t i = 0; i < b; ++i) {
    in.images.push_back(oracle::random_matrix(g, c.patches, c.vision_input_dim));
    in.texts.push_back(oracle::random_matrix(g, c.words, c.language_input_dim));
  }
  return in;
}

TEST(Build, DeterministicInSeed) {
  const Model a = build_model(small());
  const Model b = build_model(small());
  EXPECT_EQ(a.weights.vision.blocks[1].attn.wq, b.weights.vision.blocks[1].attn.wq);
  EXPECT_EQ(a.mag.tokens->e, b.mag.tokens->e);
  VltConfig c = small();
  c.seed = 6;
  EXPECT_NE(build_model(c).mag.tokens->e, a.mag.tokens->e);
}

TEST(Build, RejectsBadShapes) {
  VltConfig c = small();
  c.heads = 3;
  EXPECT_THROW(build_model(c), InvalidArgument);
}

TEST(Kernels, LayerNormAndGelu) {
  std::mt19937_64 g(1);
  const Matrix x = oracle::random_matrix(g, 4, 6, 3.0);
  const Matrix y = layer_norm(x, {Vector(6, 1.0), Vector(6, 0.0)});
  for (std::size_t r = 0; r < 4; ++r) {
    double m = 0.0, v = 0.0;
    for (double a : y.row(r)) m += a / 6.0;
    for (double a : y.row(r)) v += (a - m) * (a - m) / 6.0;
    EXPECT_NEAR(m, 0.0, 1e-12);
    EXPECT_NEAR(v, 1.0, 1e-4);
  }
  EXPECT_EQ(gelu(0.0), 0.0);
  EXPECT_NEAR(gelu(1.0), 0.8411919906082768, 1e-12);
}

TEST(Kernels, MhsaHeadsMatchNaiveAttention) {
  const Model m = build_model(small());
  std::mt19937_64 g(2);
  const Matrix x = oracle::random_matrix(g, 7, 16);
  const BlockWeights& w = m.weights.vision.blocks[0];
  const MhsaResult r = mhsa_forward(x, w.ln1, w.attn, 2);
  const Matrix h = layer_norm(x, w.ln1);
  const Matrix q = numerics::matmul(h, w.attn.wq), k = numerics::matmul(h, w.attn.wk),
               v = numerics::matmul(h, w.attn.wv);
  for (std::size_t hd = 0; hd < 2; ++hd) {
    Matrix qs(7, 8), ks(7, 8), vs(7, 8);
    for (std::size_t i = 0; i < 7; ++i)
      for (std::size_t c = 0; c < 8; ++c) {
        qs(i, c) = q(i, hd * 8 + c);
        ks(i, c) = k(i, hd * 8 + c);
        vs(i, c) = v(i, hd * 8 + c);
      }
    Matrix out, attn;
    oracle::naive_attention(qs, ks, vs, std::sqrt(8.0), out, attn);
    for (std::size_t i = 0; i < attn.data().size(); ++i) EXPECT_NEAR(r.head_attn[hd].data()[i], attn.data()[i], 1e-12);
  }
  for (std::size_t i = 0; i < 7; ++i) {
    double s = 0.0;
    for (double a : r.attn.row(i)) s += a;
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(Kernels, CrossAttentionOnlyWhenEnabled) {
  const Model m = build_model(small());
  EXPECT_THROW(cross_attention_forward(Matrix(3, 16), Matrix(4, 16), std::nullopt, false), UnsupportedOperation);
}

TEST(Tokenize, ShapeAndSpecial) {
  VltConfig c = small();
  c.special_std = 0.5;
  const Model m = build_model(c);
  const Inputs in = inputs(c, 2, 3);
  const TokenBatch b = tokenize(in.images, Modality::vision, m.weights.vision, c);
  ASSERT_EQ(b.instances.size(), 2u);
  EXPECT_EQ(b.instances[0].size(), 10u);
  for (std::size_t k = 0; k < 16; ++k) EXPECT_EQ(b.instances[1].tokens(0, k), m.weights.vision.special[k]);
  EXPECT_THROW(tokenize({Matrix(3, 8)}, Modality::vision, m.weights.vision, c), InvalidArgument);
}

TEST(Forward, OneSharedTokenObjectServesEveryLayer) {
  const Model m = build_model(small());
  const Inputs in = inputs(m.config, 3, 4);
  const ForwardResult r = model_forward(in.images, in.texts, m, make_dtp_handle(m.config));
  ASSERT_EQ(r.alignment.size(), 3u);
  for (const auto& inst : r.alignment) {
    ASSERT_EQ(inst.size(), 3u);
    for (const AlignmentRecord& a : inst) {
      EXPECT_EQ(a.tokens, m.mag.tokens.get());
      EXPECT_TRUE(std::isfinite(a.l_sim));
    }
  }
}

TEST(Forward, PruningInvariantsHold) {
  const Model m = build_model(small());
  const Inputs in = inputs(m.config, 6, 5);
  const ForwardResult r = model_forward(in.images, in.texts, m, make_dtp_handle(m.config));
  for (const InstanceTrace& t : r.report.instances) {
    ASSERT_EQ(t.layers.size(), 6u);
    std::size_t prev[2] = {10, 6};
    for (const LayerRecord& rec : t.layers) {
      const int b = rec.branch == Modality::vision ? 0 : 1;
      EXPECT_EQ(rec.tokens_in, prev[b]);
      EXPECT_LE(rec.tokens_out, rec.tokens_in);
      EXPECT_EQ(rec.kept_origins.front(), 0);
      EXPECT_NEAR(rec.tis_sum, 1.0, 1e-9);
      EXPECT_LE(rec.tis_min, rec.theta);
      EXPECT_LE(rec.theta, rec.tis_max);
      prev[b] = rec.tokens_out;
    }
    EXPECT_NEAR(t.gflops, budget::model_flops(t, flops_model(m.config)), 1e-15);
  }
}

TEST(Forward, DisabledPruningMatchesBaseline) {
  VltConfig c = small();
  c.pruning = false;
  const Model m = build_model(c);
  const Inputs in = inputs(c, 2, 6);
  const ForwardResult r = model_forward(in.images, in.texts, m, make_dtp_handle(c));
  for (const InstanceTrace& t : r.report.instances)
    EXPECT_DOUBLE_EQ(t.gflops, budget::baseline_gflops(flops_model(c)));
}

TEST(Forward, VisionScopeLeavesLanguageIntact) {
  VltConfig c = small();
  c.scope = ModalityScope::vision;
  const Model m = build_model(c);
  const Inputs in = inputs(c, 2, 7);
  const ForwardResult r = model_forward(in.images, in.texts, m, make_dtp_handle(c));
  for (const InstanceTrace& t : r.report.instances)
    for (const LayerRecord& rec : t.layers)
      if (rec.branch == Modality::language) EXPECT_EQ(rec.tokens_out, 6u);
}

TEST(Forward, CrossAttentionRecordsContext) {
  VltConfig c = small();
  c.cross_attention = true;
  const Model m = build_model(c);
  const Inputs in = inputs(c, 2, 8);
  const ForwardResult r = model_forward(in.images, in.texts, m, make_dtp_handle(c));
  for (const InstanceTrace& t : r.report.instances) {
    std::size_t vision_out = 0;
    for (const LayerRecord& rec : t.layers) {
      if (rec.branch == Modality::vision) vision_out = rec.tokens_out;
      else EXPECT_EQ(rec.context, vision_out);
    }
  }
}

TEST(Forward, PerInstancePolicyIsBatchIndependent) {
  VltConfig c = small();
  c.keep_policy = dtp::KeepPolicy::per_instance;
  const Model m = build_model(c);
  const Inputs in = inputs(c, 4, 9);
  const ForwardResult all = model_forward(in.images, in.texts, m, make_dtp_handle(c));
  for (std::size_t i = 0; i < 4; ++i) {
    const ForwardResult one = model_forward({in.images[i]}, {in.texts[i]}, m, make_dtp_handle(c));
    EXPECT_EQ(one.report.instances[0].layers, all.report.instances[i].layers);
  }
}

TEST(Forward, KeepsMapsWhenAsked) {
  const Model m = build_model(small());
  const Inputs in = inputs(m.config, 1, 10);
  ForwardOptions o;
  o.keep_maps = true;
  o.keep_activations = true;
  const ForwardResult r = model_forward(in.images, in.texts, m, make_dtp_handle(m.config), o);
  ASSERT_EQ(r.maps[0].size(), 6u);
  EXPECT_EQ(r.maps[0][0].a_self.rows(), 10u);
  EXPECT_EQ(r.maps[0][0].a_token.rows(), 2u);
  EXPECT_EQ(r.vision_inputs[0].size(), 3u);
}

}  // namespace
}  // namespace madtp::vlt
