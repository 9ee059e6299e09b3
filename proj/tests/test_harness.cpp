#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <gtest/gtest.h>

#include "causalnav/harness.hpp"

namespace causalnav {
namespace {

namespace fs = std::filesystem;

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

fs::path scratch_dir(const std::string& name) {
  const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
  const fs::path p = fs::temp_directory_path() / "causalnav_tests" / (std::string(info->name()) + "_" + name);
  fs::remove_all(p);
  return p;
}

// a small track and coarse grid so a full pipeline runs in about a second
ExperimentConfig tiny(const fs::path& out) {
  ExperimentConfig c;
  c.out_dir = out.string();
  c.track_a = 3.0;
  c.track_b = 2.0;
  c.track_half_width = 1.0;
  c.support_spacing = 1.5;
  c.support_headings = 4;
  c.lengthscale_xy = 1.5;
  c.collect_episodes = 2;
  c.collect_steps = 150;
  c.estimator.k_neighbors = 20;
  c.trials = 3;
  c.steps = 100;
  c.max_iterations = 10;
  return c;
}

TEST(Config, DefaultsValidateAndRoundTrip) {
  const ExperimentConfig def;
  EXPECT_NO_THROW(def.validate());
  std::stringstream a;
  def.write(a);
  std::stringstream in(a.str());
  const auto back = ExperimentConfig::parse(in);
  std::stringstream b;
  back.write(b);
  EXPECT_EQ(a.str(), b.str());

  // every key appears exactly once
  std::set<std::string> keys;
  for (const auto& k : ExperimentConfig::keys()) EXPECT_TRUE(keys.insert(k).second) << k;
  const std::string text = a.str();
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), static_cast<long>(keys.size()));
}

TEST(Config, ParsesCommentsAndOverrides) {
  std::stringstream in("# sweep setup\nseed = 42   # master\n\ntrack.ice_coverage=0.8\nsweep.methods = dr,ipw\n");
  const auto c = ExperimentConfig::parse(in);
  EXPECT_EQ(c.seed, 42u);
  EXPECT_EQ(c.ice_coverage, 0.8);
  EXPECT_EQ(c.sweep_methods, (std::vector<std::string>{"dr", "ipw"}));
  EXPECT_EQ(c.trials, ExperimentConfig{}.trials);
}

TEST(Config, RejectsUnknownRepeatedAndBadValues) {
  std::stringstream unknown("seeds = 3\n");
  EXPECT_THROW(ExperimentConfig::parse(unknown), std::invalid_argument);
  std::stringstream repeated("seed = 3\nseed = 4\n");
  EXPECT_THROW(ExperimentConfig::parse(repeated), std::invalid_argument);
  std::stringstream junk("seed 3\n");
  EXPECT_THROW(ExperimentConfig::parse(junk), std::invalid_argument);
  ExperimentConfig c;
  EXPECT_THROW(c.set("rollout.trials", "many"), std::invalid_argument);
  EXPECT_THROW(c.set("estimator.method", "bayes"), std::invalid_argument);
  c.set("solver.gamma", "1.5");
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(NormalizedScore, Anchors) {
  EXPECT_DOUBLE_EQ(normalized_score(10, 0, 10), 1.0);
  EXPECT_DOUBLE_EQ(normalized_score(0, 0, 10), 0.0);
  EXPECT_DOUBLE_EQ(normalized_score(5, 0, 10), 0.5);
  EXPECT_DOUBLE_EQ(normalized_score(-3, -3, 7), 0.0);
  EXPECT_THROW(normalized_score(1, 2, 2), std::invalid_argument);
}

TEST(Welch, MatchesReferenceValues) {
  // reference values from an independent statistics package
  auto w = welch_greater({3.1, 2.4, 4.0, 3.3, 2.9, 3.8}, {2.0, 2.6, 1.9, 2.8, 2.2, 1.5, 2.4});
  EXPECT_NEAR(w.t, 3.581958115353895, 1e-12);
  EXPECT_NEAR(w.p_value, 0.002841379044559831, 1e-9);
  w = welch_greater({1.0, 1.2, 0.9, 1.1}, {1.05, 0.95, 1.3, 0.8, 1.0});
  EXPECT_NEAR(w.t, 0.28845264890889444, 1e-12);
  EXPECT_NEAR(w.p_value, 0.3907086190854543, 1e-9);
  // swapping the samples flips the sign and complements the p-value
  const auto r = welch_greater({1.05, 0.95, 1.3, 0.8, 1.0}, {1.0, 1.2, 0.9, 1.1});
  EXPECT_NEAR(r.t, -w.t, 1e-12);
  EXPECT_NEAR(r.p_value, 1.0 - w.p_value, 1e-12);
}

TEST(Summarize, SampleStatistics) {
  const auto s = summarize({1.0, 2.0, 3.0, 4.0});
  EXPECT_DOUBLE_EQ(s.mean, 2.5);
  EXPECT_NEAR(s.stddev, std::sqrt(5.0 / 3.0), 1e-15);
  EXPECT_EQ(summarize({7.0}).stddev, 0.0);
}

TEST(Seeds, DistinctAcrossStagesAndCells) {
  std::set<std::uint64_t> seen;
  for (const char* s : {"collect", "rollout"}) EXPECT_TRUE(seen.insert(stage_seed(7, s)).second);
  for (double rho : {0.0, 0.2, 0.4, 0.6, 0.8, 1.0})
    for (const char* m : {"regression", "ipw", "dr", "randomized"}) EXPECT_TRUE(seen.insert(sweep_seed(7, rho, m)).second);
  for (double rho : {0.2, 0.4})
    for (auto mode : {CollectionMode::biased, CollectionMode::randomized})
      EXPECT_TRUE(seen.insert(dataset_seed(7, rho, mode)).second);
  EXPECT_EQ(sweep_seed(7, 0.6, "dr"), sweep_seed(7, 0.6, "dr"));
  EXPECT_NE(sweep_seed(7, 0.6, "dr"), sweep_seed(8, 0.6, "dr"));
}

TEST(Supports, GridCoversTheCrashMargin) {
  const ExperimentConfig c;
  const auto track = make_track(c);
  const auto sup = make_supports(c, track);
  EXPECT_EQ(sup.size(), 2016u);
  const auto q = support_queries(sup, track);
  ASSERT_EQ(q.size(), sup.size());
  EXPECT_EQ(q[0].feature.size(), 2u);
}

TEST(Pipeline, SmokeEmitsArtifactsAndIsDeterministic) {
  const auto dir = scratch_dir("a");
  auto cfg = tiny(dir);
  cfg.threads = 1;
  const auto res = run_pipeline(cfg);
  for (const char* f : {"dataset.csv", "moments.csv", "policy.csv", "metrics.csv", "config.cfg", "track.cfg"})
    EXPECT_TRUE(fs::exists(dir / f)) << f;
  EXPECT_EQ(res.rollout.trials.size(), 3u);

  // the persisted config reproduces the run, here with more threads
  const auto dir2 = scratch_dir("b");
  auto again = ExperimentConfig::load(dir / "config.cfg");
  again.out_dir = dir2.string();
  again.threads = 4;
  run_pipeline(again);
  EXPECT_EQ(slurp(dir / "metrics.csv"), slurp(dir2 / "metrics.csv"));
  EXPECT_EQ(slurp(dir / "policy.csv"), slurp(dir2 / "policy.csv"));
  EXPECT_EQ(slurp(dir / "dataset.csv"), slurp(dir2 / "dataset.csv"));
}

TEST(Pipeline, MethodChangesOnlyDownstreamFiles) {
  const auto dir = scratch_dir("reg");
  auto cfg = tiny(dir);
  cfg.method = EstimatorKind::regression;
  run_pipeline(cfg);
  const std::string dataset = slurp(dir / "dataset.csv"), moments = slurp(dir / "moments.csv");
  cfg.method = EstimatorKind::dr;
  run_pipeline(cfg, /*reuse_dataset=*/true);
  EXPECT_EQ(slurp(dir / "dataset.csv"), dataset);
  EXPECT_NE(slurp(dir / "moments.csv"), moments);
}

TEST(Pipeline, StageErrorsNameTheStage) {
  const auto dir = scratch_dir("bad");
  auto cfg = tiny(dir);
  fs::create_directories(dir);
  std::ofstream(dir / "dataset.csv") << "not,a,dataset\n";
  try {
    run_pipeline(cfg, /*reuse_dataset=*/true);
    FAIL() << "expected a stage error";
  } catch (const StageError& e) {
    EXPECT_EQ(e.stage(), "collect");
  }
}

TEST(Sweep, CellLayoutAndOutputs) {
  const auto dir = scratch_dir("sweep");
  auto cfg = tiny(dir);
  cfg.trials = 2;
  cfg.steps = 50;
  const auto one = sweep_ice(cfg, {0.0}, {"regression"});
  ASSERT_EQ(one.cells.size(), 1u);
  EXPECT_TRUE(one.cells[0].error.empty()) << one.cells[0].error;

  const auto rep = sweep_ice(cfg, {0.0, 0.5}, {"ipw", "randomized"});
  ASSERT_EQ(rep.cells.size(), 4u);
  EXPECT_EQ(rep.cells[0].coverage, 0.0);
  EXPECT_EQ(rep.cells[0].method, "ipw");
  EXPECT_EQ(rep.cells[3].method, "randomized");
  EXPECT_EQ(rep.cell(0.5, "ipw").trials, 2u);
  EXPECT_THROW(rep.cell(0.3, "ipw"), std::out_of_range);
  EXPECT_THROW(sweep_ice(cfg, {1.5}, {"dr"}), std::invalid_argument);

  write_sweep_outputs(cfg, rep);
  EXPECT_TRUE(fs::exists(dir / "sweep.csv"));
  const std::string svg = slurp(dir / "reward_vs_ice.svg");
  EXPECT_NE(svg.find("<svg"), std::string::npos);
  EXPECT_NE(svg.find("</svg>"), std::string::npos);
}

}  // namespace
}  // namespace causalnav
