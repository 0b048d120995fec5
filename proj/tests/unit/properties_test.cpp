// SPDX-License-Identifier: Apache-2.0
// Harness-level properties on the default toy workload.
#include <gtest/gtest.h>

#include <filesystem>
#include <map>

#include "madtp/render.hpp"
#include "madtp/runs.hpp"

namespace madtp::harness {
namespace {

namespace fs = std::filesystem;

class WorkloadTest : public ::testing::Test {
 protected:
  RunConfig config = default_config();
  vlt::Model model = vlt::build_model(config.model);
  Dataset data = gen_synthetic(config, model, config.data.seed);

  vlt::DtpHandle at(double t) const {
    vlt::DtpHandle h = vlt::make_dtp_handle(config.model);
    h.settings.temperature = t;
    return h;
  }
};

TEST_F(WorkloadTest, MatchedStpTracksMadtpWithinTwoPercent) {
  for (double t : {1.0, 3.0, 10.0, 100.0}) {
    const PruneReport m = simulate(config, model, data, at(t));
    const PruneReport s = run_stp_baseline(config, model, data, 0, matched_stp_counts(m, config.model.layers));
    EXPECT_NEAR(s.dataset_average_gflops, m.dataset_average_gflops, 0.02 * m.dataset_average_gflops) << "T=" << t;
  }
}

TEST_F(WorkloadTest, StpWithZeroKIsTheUnprunedRun) {
  RunConfig off = config;
  off.model.pruning = false;
  const PruneReport unpruned = simulate(off, model, data, vlt::make_dtp_handle(off.model));
  const PruneReport stp = run_stp_baseline(config, model, data, 0);
  EXPECT_EQ(stp.instances, unpruned.instances);
  EXPECT_EQ(unpruned.reduce_ratio, 0.0);
}

TEST_F(WorkloadTest, DisabledPruningCalibratesImmediately) {
  RunConfig off = config;
  off.model.pruning = false;
  const vlt::Model m = vlt::build_model(off.model);
  const CalibrationResult r = run_calibrate(off, m, data, 0.0);
  EXPECT_TRUE(r.converged);
  ASSERT_EQ(r.state.history.size(), 1u);
  EXPECT_EQ(r.state.history[0].epoch, 0u);
}

TEST_F(WorkloadTest, NonConvergenceIsReported) {
  config.run.max_iterations = 2;
  const CalibrationResult r = run_calibrate(config, model, data, 0.7);
  EXPECT_FALSE(r.converged);
  EXPECT_EQ(r.iterations, 2u);
}

// Harder pairs (more planted concepts) keep at least as many tokens.
TEST_F(WorkloadTest, HardPairsRetainAtLeastEasyOnes) {
  config.data.size = 256;
  config.run.batch_size = 1;
  const Dataset d = gen_synthetic(config, model, 7);
  for (double t : {1.0, 3.0, 10.0}) {
    const PruneReport r = simulate(config, model, d, at(t));
    std::map<std::size_t, std::pair<double, double>> kept;  // difficulty -> (sum, count)
    for (const InstanceTrace& tr : r.instances) {
      double k = 0.0;
      for (const LayerRecord& rec : tr.layers) k += static_cast<double>(rec.tokens_out);
      kept[tr.difficulty].first += k;
      kept[tr.difficulty].second += 1.0;
    }
    ASSERT_TRUE(kept.count(1) && kept.count(3));
    EXPECT_GE(kept[3].first / kept[3].second, kept[1].first / kept[1].second) << "T=" << t;
  }
}

TEST_F(WorkloadTest, SortedBatchingNeverCostsMore) {
  for (std::uint64_t seed = 2000; seed < 2012; ++seed) {
    const Dataset d = gen_synthetic(config, model, seed);
    for (double t : {1.0, 3.0, 10.0}) {
      config.run.sorted = false;
      const double random_order = simulate(config, model, d, at(t)).dataset_average_gflops;
      config.run.sorted = true;
      const double sorted = simulate(config, model, d, at(t)).dataset_average_gflops;
      EXPECT_LE(sorted, random_order) << "seed=" << seed << " T=" << t;
    }
  }
}

TEST(Export, EmptyDatasetGivesHeaderOnlyReport) {
  RunConfig c = default_config();
  c.data.size = 0;
  const fs::path dir = fs::temp_directory_path() / "madtp_empty_run";
  fs::remove_all(dir);
  const SimulateOutput out = run_simulate(c, dir.string());
  EXPECT_TRUE(out.report.instances.empty());
  EXPECT_EQ(read_report((dir / "report.txt").string()), out.report);
  fs::remove_all(dir);
}

TEST(Export, OneSampleTwoLayersRendersTwoMasksPerBranch) {
  RunConfig c = default_config();
  c.model.layers = 2;
  c.data.size = 1;
  c.run.render_samples = 1;
  const fs::path dir = fs::temp_directory_path() / "madtp_one_sample";
  fs::remove_all(dir);
  run_simulate(c, dir.string());
  std::size_t vision = 0, language = 0;
  for (const auto& e : fs::directory_iterator(dir / "masks")) {
    const std::string n = e.path().filename().string();
    if (e.path().extension() != ".ppm") continue;
    vision += n.find("_vision_") != std::string::npos;
    language += n.find("_language_") != std::string::npos;
  }
  EXPECT_EQ(vision, 2u);
  EXPECT_EQ(language, 2u);
  fs::remove_all(dir);
}

}  // namespace
}  // namespace madtp::harness
