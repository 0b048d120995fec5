// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <set>
#include <sstream>

#include "madtp/mag.hpp"
#include "madtp/synthetic.hpp"
#include "oracles.hpp"

namespace madtp::harness {
namespace {

TEST(PseudoInverse, PenroseConditions) {
  std::mt19937_64 g(4);
  for (auto [r, c] : {std::pair{5, 3}, std::pair{3, 5}, std::pair{4, 4}}) {
    const Matrix a = oracle::random_matrix(g, r, c);
    const Matrix p = pseudo_inverse(a);
    const Matrix apa = numerics::matmul(numerics::matmul(a, p), a);
    for (std::size_t i = 0; i < a.data().size(); ++i) EXPECT_NEAR(apa.data()[i], a.data()[i], 1e-10);
  }
}

class SyntheticTest : public ::testing::Test {
 protected:
  RunConfig config = default_config();
  vlt::Model model = vlt::build_model(config.model);
  Dataset data = gen_synthetic(config, model, 17);
};

TEST_F(SyntheticTest, Deterministic) {
  const Dataset again = gen_synthetic(config, model, 17);
  ASSERT_EQ(again.samples.size(), data.samples.size());
  for (std::size_t i = 0; i < data.samples.size(); ++i) {
    EXPECT_EQ(again.samples[i].image, data.samples[i].image);
    EXPECT_EQ(again.samples[i].text, data.samples[i].text);
  }
  EXPECT_EQ(ground_truth_tsv(again), ground_truth_tsv(data));
  EXPECT_NE(gen_synthetic(config, model, 18).samples[0].image, data.samples[0].image);
}

TEST_F(SyntheticTest, PlantedCountsAndRanges) {
  std::size_t empty = 0;
  for (const Sample& s : data.samples) {
    EXPECT_EQ(s.image.rows(), config.model.patches);
    EXPECT_EQ(s.text.rows(), config.model.words);
    if (s.concepts == 0) {
      ++empty;
      EXPECT_TRUE(s.vision_planted.empty());
      EXPECT_FALSE(s.matched);
      continue;
    }
    EXPECT_GE(s.concepts, config.data.concept_min);
    EXPECT_LE(s.concepts, config.data.concept_max);
    EXPECT_EQ(s.vision_planted.size(), s.concepts * config.data.patches_per_concept);
    EXPECT_EQ(s.language_planted.size(), s.concepts * config.data.words_per_concept);
    std::set<std::size_t> all(s.vision_planted.begin(), s.vision_planted.end());
    all.insert(s.vision_distractors.begin(), s.vision_distractors.end());
    EXPECT_EQ(all.size(), s.vision_planted.size() + s.vision_distractors.size());
    EXPECT_LT(*all.rbegin(), config.model.patches);
  }
  EXPECT_GT(empty, 0u);
  EXPECT_LT(empty, data.samples.size() / 2);
}

// Planted patches land near a learnable-token direction after the embedding
// and layer-0 projection; background patches do not.
TEST_F(SyntheticTest, PlantedPatchesAlignWithTokens) {
  const auto& w = model.weights.vision;
  const auto& proj = model.mag.projections.layers[0];
  const Matrix& e = model.mag.tokens->e;
  double planted = 0.0, background = 0.0;
  std::size_t np = 0, nb = 0;
  for (const Sample& s : data.samples) {
    const Matrix emb = numerics::matmul(s.image, w.embed);
    const Matrix mapped = mag::project(emb, proj.w_v, proj.b_v);
    std::set<std::size_t> pl(s.vision_planted.begin(), s.vision_planted.end());
    for (std::size_t r = 0; r < mapped.rows(); ++r) {
      double best = -1.0;
      for (std::size_t k = 0; k < e.rows(); ++k) best = std::max(best, numerics::cosine_similarity(mapped.row(r), e.row(k)));
      if (pl.count(r)) {
        planted += best;
        ++np;
      } else if (s.concepts > 0) {
        background += best;
        ++nb;
      }
    }
  }
  EXPECT_GT(planted / static_cast<double>(np), background / static_cast<double>(nb) + 0.2);
}

TEST_F(SyntheticTest, GroundTruthTable) {
  const std::string t = ground_truth_tsv(data);
  std::istringstream is(t);
  std::string line;
  std::size_t lines = 0;
  while (std::getline(is, line)) ++lines;
  EXPECT_EQ(lines, data.samples.size() + 1);
  EXPECT_EQ(t.rfind("index\tmatched", 0), 0u);
}

}  // namespace
}  // namespace madtp::harness
