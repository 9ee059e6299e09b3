#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "causalnav/core.hpp"
#include "causalnav/estimators.hpp"
#include "causalnav/rng.hpp"

namespace causalnav {

enum class Terrain { ice, concrete, pebbles };

std::string to_string(Terrain t);
Terrain parse_terrain(const std::string& name);

struct SlipTable {
  double ice = 0.1;
  double concrete = 0.9;
  double pebbles = 0.5;

  double operator()(Terrain t) const;
};

/// Angular interval [begin, end) of the centerline parameter.
struct TerrainSegment {
  double begin = 0.0;
  double end = 0.0;
  Terrain terrain = Terrain::concrete;
  double slip = 0.9;
};

struct CenterlinePoint {
  double t = 0.0;                // ellipse parameter in [0, 2pi)
  double signed_distance = 0.0;  // positive outside the centerline
  double arc = 0.0;              // arc length from t = 0
};

struct TerrainSample {
  Terrain terrain = Terrain::concrete;
  double slip = 0.9;
  ContextFeature feature;  // (slip, signed centerline distance)
};

/// Elliptical track, centerline (cx + a cos t, cy + b sin t), driven with
/// increasing t.
class TerrainTrack {
 public:
  TerrainTrack(double cx, double cy, double a, double b, double half_width,
               std::vector<TerrainSegment> segments);

  /// `sectors` equal sectors, each starting with an ice run of fraction `coverage`;
  /// the rest of a sector alternates concrete (even) and pebbles (odd).
  static TerrainTrack with_coverage(double cx, double cy, double a, double b, double half_width,
                                    double coverage, int sectors, const SlipTable& slips);

  double cx() const { return cx_; }
  double cy() const { return cy_; }
  double a() const { return a_; }
  double b() const { return b_; }
  double half_width() const { return half_width_; }
  double length() const { return arc_.back(); }
  const std::vector<TerrainSegment>& segments() const { return segments_; }
  double ice_coverage() const;

  Vec3 centerline(double t) const;  // (x, y, tangent heading)
  double arc_at(double t) const;
  double param_at_arc(double s) const;
  CenterlinePoint project(double x, double y) const;
  const TerrainSegment& segment_at(double t) const;

 private:
  double cx_, cy_, a_, b_, half_width_;
  std::vector<TerrainSegment> segments_;
  std::vector<double> arc_;  // cumulative arc length on a uniform t grid
};

TerrainSample terrain_at(double x, double y, const TerrainTrack& track);

/// Vehicle actions: v in {0, 2, 4, 6, 8} x omega in {0, +-pi/4, +-pi/2, +-3pi/4}.
/// Ids are dense and ordered by speed, then |omega|, negative turn first.
std::vector<Action> default_actions();
std::vector<int> action_ids(const std::vector<Action>& actions);
bool is_aggressive(const Action& a);
/// Lowest speed, then lowest |omega|, then lowest id.
const Action& most_conservative(const std::vector<Action>& actions);

struct VehicleParams {
  double dt = 0.1;
  Vec3 base_noise{0.02, 0.02, 0.02};  // m, m, rad per step
  double slip_noise_gain = 2.0;
  double speed_attenuation = 0.5;  // v_eff = v (1 - att (1 - slip))
  double turn_attenuation = 0.5;

  void validate() const;
};

struct RewardParams {
  double off_track_penalty = 1.0;  // per meter beyond the half-width
  double crash_margin = 1.0;       // meters beyond the half-width that end a run
  double crash_penalty = 3.0;

  void validate() const;
};

/// Mean shift and per-axis noise std of one step.
struct StepLaw {
  Vec3 mean;
  Vec3 stddev;
};

StepLaw step_law(const State& s, const Action& a, const TerrainTrack& track, const VehicleParams& params);
State step(const State& s, const Action& a, const TerrainTrack& track, const VehicleParams& params, Rng& rng);

/// Exact first and non-central second moment of the state shift.
MomentPair true_moments(const State& s, const Action& a, const TerrainTrack& track,
                        const VehicleParams& params);

double reward(const State& s, const Action& a, const State& s_next, const TerrainTrack& track,
              const RewardParams& params);
bool crashed(const State& s, const TerrainTrack& track, const RewardParams& params);

/// Expected reward when the shift has mean mu and non-central second moment
/// sigma, by a symmetric sigma-point rule.
double expected_reward(const State& s, const Action& a, const Vec3& mu, const Mat3& sigma,
                       const TerrainTrack& track, const RewardParams& params);

struct PursuitParams {
  double lookahead = 1.5;     // meters along the centerline
  double explore_rate = 0.1;  // probability of a uniformly random action
};

using BasePolicy = std::function<const Action&(const State&, const ContextFeature&, Rng&)>;

/// Pure-pursuit follower: the fastest speed whose required turn rate is in the
/// action set, then the closest turn rate. Explores uniformly with explore_rate.
BasePolicy pure_pursuit(const TerrainTrack& track, const std::vector<Action>& actions,
                        const PursuitParams& params);

struct BehaviorParams {
  double ice_slip_threshold = 0.3;
  double override_probability = 0.9;

  void validate() const;
};

const Action& behavior_policy(const State& s, const ContextFeature& c, Rng& rng,
                              const BasePolicy& base, const std::vector<Action>& actions,
                              const BehaviorParams& params);

enum class CollectionMode { biased, randomized };
std::string to_string(CollectionMode m);
CollectionMode parse_collection_mode(const std::string& name);

struct CollectionConfig {
  CollectionMode mode = CollectionMode::biased;
  std::size_t episodes = 20;
  std::size_t steps = 500;
  std::uint64_t seed = 1;
  unsigned threads = 0;
  double spawn_heading_jitter = 0.2;  // rad, std of the start heading around the tangent
  PursuitParams pursuit;
  BehaviorParams behavior;
};

/// Start pose: uniform along the centerline, lateral and heading jitter.
State spawn(const TerrainTrack& track, Rng& rng, double heading_jitter = 0.2);

struct LoggedStep {
  std::size_t episode = 0;
  std::size_t t = 0;
};

struct CollectedData {
  Dataset dataset;
  std::vector<LoggedStep> index;  // parallel to dataset samples
};

CollectedData collect_dataset(const TerrainTrack& track, const VehicleParams& vehicle,
                              const RewardParams& rewards, const std::vector<Action>& actions,
                              const CollectionConfig& cfg);

void write_dataset_csv(std::ostream& os, const CollectedData& data);
CollectedData read_dataset_csv(std::istream& is);

struct RolloutMetrics {
  double cumulative_reward = 0.0;
  double aggressive_frequency = 0.0;
  double mean_speed = 0.0;
  double mean_abs_turn = 0.0;
  double steps = 0.0;
  double crashes = 0.0;
};

struct RolloutResult {
  std::vector<RolloutMetrics> trials;
  RolloutMetrics mean;
};

using StatePolicy = std::function<int(const State&, Rng&)>;

/// Runs `trials` independent episodes of `steps` steps. A run that leaves the
/// crash margin is charged the crash penalty and respawned.
RolloutResult rollout(const StatePolicy& policy, const TerrainTrack& track,
                      const VehicleParams& vehicle, const RewardParams& rewards,
                      const std::vector<Action>& actions, std::size_t trials, std::size_t steps,
                      std::uint64_t seed, unsigned threads = 0);

}  // namespace causalnav
