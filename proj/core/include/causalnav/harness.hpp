#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "causalnav/estimators.hpp"
#include "causalnav/kernel.hpp"
#include "causalnav/mdp.hpp"
#include "causalnav/trackworld.hpp"

namespace causalnav {

/// Failure inside a named pipeline stage (collect, estimate, plan, rollout, ...).
class StageError : public std::runtime_error {
 public:
  StageError(std::string stage, const std::string& what)
      : std::runtime_error("[" + stage + "] " + what), stage_(std::move(stage)) {}
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

struct ExperimentConfig {
  std::uint64_t seed = 7;
  std::string out_dir = "out";
  unsigned threads = 0;

  // track
  double track_center_x = 0.0;
  double track_center_y = 0.0;
  double track_a = 6.0;
  double track_b = 4.0;
  double track_half_width = 1.5;
  double ice_coverage = 0.6;
  int track_sectors = 4;
  std::string track_segments;  // "terrain:begin:end[:slip];..." overrides coverage/sectors
  SlipTable slips;

  VehicleParams vehicle;
  RewardParams reward;

  // collection
  CollectionMode collect_mode = CollectionMode::biased;
  std::size_t collect_episodes = 20;
  std::size_t collect_steps = 500;
  double spawn_heading_jitter = 0.2;
  PursuitParams pursuit;
  BehaviorParams behavior;

  // estimation
  EstimatorKind method = EstimatorKind::dr;
  EstimatorConfig estimator{50, 0.5, 0.01, 1e-6, KdeScope::full, 0};

  // kernel, supports and solver
  double lengthscale_xy = 1.0;
  double lengthscale_theta = 0.8;
  double regularization = 3.0;  // the library default 1e-3 makes policy iteration oscillate here
  double support_spacing = 1.0;
  int support_headings = 8;
  double gamma = 0.9;
  int max_iterations = 50;

  bool pessimism = false;
  // penalty: twice the one-step reward range, progress in [-0.8, 0.8] at top speed
  // plus off-track and crash charges down to -4.8
  PessimismConfig pessimism_cfg{0.5, 3, 11.2};

  // evaluation
  std::size_t trials = 20;
  std::size_t steps = 2000;

  // sweep
  std::vector<double> sweep_coverages{0.2, 0.4, 0.6, 0.8};
  std::vector<std::string> sweep_methods{"regression", "ipw", "dr", "randomized"};

  /// Throws std::invalid_argument naming the offending key.
  void validate() const;

  /// Sets one key from its text form; throws on unknown keys or bad values.
  void set(const std::string& key, const std::string& value);

  /// Reads `key = value` lines ('#' starts a comment). Unknown or repeated keys
  /// are rejected. Unset keys keep their defaults.
  static ExperimentConfig parse(std::istream& is);
  static ExperimentConfig load(const std::filesystem::path& path);

  /// Every key with its resolved value, in schema order.
  void write(std::ostream& os) const;

  static std::vector<std::string> keys();
};

TerrainTrack make_track(const ExperimentConfig& cfg);
KernelConfig make_kernel(const ExperimentConfig& cfg);

/// Grid supports covering every pose that can occur before a crash reset.
SupportingSet make_supports(const ExperimentConfig& cfg, const TerrainTrack& track);

/// Query points (support pose, terrain feature) for the moment table.
std::vector<QueryPoint> support_queries(const SupportingSet& supports, const TerrainTrack& track);

CollectedData collect(const ExperimentConfig& cfg, const TerrainTrack& track, CollectionMode mode,
                      std::uint64_t seed);

MomentTable estimate(const ExperimentConfig& cfg, std::span<const QueryPoint> queries,
                     const Dataset& dataset, EstimatorKind method);

/// Simulator moments at every support, for reference planning.
MomentTable true_moment_table(const SupportingSet& supports, const std::vector<Action>& actions,
                              const TerrainTrack& track, const VehicleParams& vehicle);

/// Expected one-step reward of every (support, action) cell under the table's model.
RewardMatrix model_rewards(const SupportingSet& supports, const MomentTable& table,
                           const std::vector<Action>& actions, const TerrainTrack& track,
                           const RewardParams& params, unsigned threads);

/// Policy iteration on the table; with pessimism on, cells flagged by the ball
/// detector over `dataset` are penalized and avoided.
PolicyIterationResult plan(const ExperimentConfig& cfg, const SupportingSet& supports,
                           std::span<const QueryPoint> queries, const MomentTable& table,
                           const TerrainTrack& track, const Dataset* dataset);

/// Acts with the action of the nearest support.
StatePolicy support_policy(const SupportingSet& supports, const Policy& policy);
StatePolicy uniform_policy(const std::vector<Action>& actions);

RolloutResult evaluate(const ExperimentConfig& cfg, const TerrainTrack& track, const StatePolicy& policy,
                       std::uint64_t seed);

void write_metrics_csv(std::ostream& os, const RolloutResult& result);

struct PipelineResult {
  RolloutResult rollout;
  PolicyIterationDiagnostics diagnostics;
  std::size_t fallback_cells = 0;
};

/// collect -> estimate -> plan -> rollout, persisting dataset.csv, moments.csv,
/// policy.csv, metrics.csv, track.cfg and config.cfg under cfg.out_dir. An
/// existing dataset.csv is reused when `reuse_dataset` is set.
PipelineResult run_pipeline(const ExperimentConfig& cfg, bool reuse_dataset = false);

struct SummaryStat {
  double mean = 0.0;
  double stddev = 0.0;  // sample standard deviation
};

struct SweepCell {
  double coverage = 0.0;
  std::string method;
  std::uint64_t seed = 0;
  std::size_t trials = 0;
  SummaryStat cumulative_reward, aggressive_frequency, mean_speed, mean_abs_turn, steps, crashes;
  std::vector<double> rewards;  // per trial
  std::vector<double> aggressive;
  std::string error;            // empty on success
};

struct SweepReport {
  std::vector<SweepCell> cells;  // coverage-major, methods in configured order

  const SweepCell& cell(double coverage, const std::string& method) const;
};

/// Seed of one pipeline stage ("collect", "rollout") for a master seed.
std::uint64_t stage_seed(std::uint64_t master, const std::string& stage);

/// Seed of a sweep cell; distinct across (coverage, method).
std::uint64_t sweep_seed(std::uint64_t master, double coverage, const std::string& method);
/// Seed of the shared observational dataset for one coverage.
std::uint64_t dataset_seed(std::uint64_t master, double coverage, CollectionMode mode);

/// Runs every (coverage, method) cell. "randomized" plans with regression on a
/// uniformly randomized dataset. Failures are recorded per cell.
SweepReport sweep_ice(const ExperimentConfig& cfg, const std::vector<double>& coverages,
                      const std::vector<std::string>& methods);

void write_sweep_csv(std::ostream& os, const SweepReport& report);
/// Line chart of one metric ("cumulative_reward" or "aggressive_frequency")
/// against coverage with one-standard-error bars.
void write_sweep_svg(std::ostream& os, const SweepReport& report, const std::string& metric);
/// Writes sweep.csv and the two charts into cfg.out_dir.
void write_sweep_outputs(const ExperimentConfig& cfg, const SweepReport& report);

/// (R_pi - R_rand) / (R_star - R_rand).
double normalized_score(double r_pi, double r_rand, double r_star);

struct WelchTest {
  double t = 0.0;
  double df = 0.0;
  double p_value = 1.0;  // one-sided, alternative mean(a) > mean(b)
};

WelchTest welch_greater(const std::vector<double>& a, const std::vector<double>& b);

SummaryStat summarize(const std::vector<double>& xs);

}  // namespace causalnav
