#include "causalnav/trackworld.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <istream>
#include <limits>
#include <numbers>
#include <ostream>
#include <stdexcept>

#include <Eigen/Eigenvalues>

#include "causalnav/io.hpp"
#include "causalnav/parallel.hpp"

namespace causalnav {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;
constexpr int kArcIntervals = 4096;
constexpr int kCoarseProjection = 96;

double ellipse_speed(double a, double b, double t) {
  const double s = std::sin(t);
  const double c = std::cos(t);
  return std::sqrt(a * a * s * s + b * b * c * c);
}

double simpson(double a, double b, double t0, double t1) {
  const double tm = 0.5 * (t0 + t1);
  return (t1 - t0) / 6.0 *
         (ellipse_speed(a, b, t0) + 4.0 * ellipse_speed(a, b, tm) + ellipse_speed(a, b, t1));
}

double wrap_param(double t) {
  t = std::fmod(t, kTwoPi);
  if (t < 0.0) t += kTwoPi;
  if (t >= kTwoPi) t = 0.0;
  return t;
}

}  // namespace

std::string to_string(Terrain t) {
  switch (t) {
    case Terrain::ice: return "ice";
    case Terrain::concrete: return "concrete";
    case Terrain::pebbles: return "pebbles";
  }
  return "unknown";
}

Terrain parse_terrain(const std::string& name) {
  if (name == "ice") return Terrain::ice;
  if (name == "concrete") return Terrain::concrete;
  if (name == "pebbles") return Terrain::pebbles;
  throw std::invalid_argument("unknown terrain '" + name + "'");
}

double SlipTable::operator()(Terrain t) const {
  switch (t) {
    case Terrain::ice: return ice;
    case Terrain::concrete: return concrete;
    case Terrain::pebbles: return pebbles;
  }
  return concrete;
}

TerrainTrack::TerrainTrack(double cx, double cy, double a, double b, double half_width,
                           std::vector<TerrainSegment> segments)
    : cx_(cx), cy_(cy), a_(a), b_(b), half_width_(half_width), segments_(std::move(segments)) {
  if (!(a_ > 0.0) || !(b_ > 0.0)) throw std::invalid_argument("track: semi-axes must be positive");
  if (!(half_width_ > 0.0)) throw std::invalid_argument("track: half-width must be positive");
  if (segments_.empty()) throw std::invalid_argument("track: no terrain segments");
  std::sort(segments_.begin(), segments_.end(),
            [](const TerrainSegment& l, const TerrainSegment& r) { return l.begin < r.begin; });
  constexpr double tol = 1e-9;
  if (std::abs(segments_.front().begin) > tol || std::abs(segments_.back().end - kTwoPi) > tol)
    throw std::invalid_argument("track: segments must cover [0, 2pi)");
  for (std::size_t i = 0; i < segments_.size(); ++i) {
    const auto& s = segments_[i];
    if (!(s.end > s.begin)) throw std::invalid_argument("track: empty or reversed segment");
    if (!(s.slip > 0.0 && s.slip <= 1.0)) throw std::invalid_argument("track: slip must be in (0, 1]");
    if (i + 1 < segments_.size() && std::abs(segments_[i + 1].begin - s.end) > tol)
      throw std::invalid_argument("track: segments must be contiguous and non-overlapping");
  }
  segments_.front().begin = 0.0;
  segments_.back().end = kTwoPi;

  arc_.resize(kArcIntervals + 1);
  arc_[0] = 0.0;
  const double h = kTwoPi / kArcIntervals;
  for (int i = 0; i < kArcIntervals; ++i) arc_[i + 1] = arc_[i] + simpson(a_, b_, i * h, (i + 1) * h);
}

TerrainTrack TerrainTrack::with_coverage(double cx, double cy, double a, double b, double half_width,
                                         double coverage, int sectors, const SlipTable& slips) {
  if (!(coverage >= 0.0 && coverage <= 1.0)) throw std::invalid_argument("track: coverage must be in [0, 1]");
  if (sectors < 1) throw std::invalid_argument("track: at least one sector required");
  std::vector<TerrainSegment> segs;
  const double w = kTwoPi / sectors;
  for (int k = 0; k < sectors; ++k) {
    const double start = k * w;
    const double stop = k + 1 == sectors ? kTwoPi : (k + 1) * w;
    const double split = coverage >= 1.0 ? stop : start + coverage * w;
    if (split > start) segs.push_back({start, split, Terrain::ice, slips.ice});
    if (stop > split) {
      const Terrain t = k % 2 == 0 ? Terrain::concrete : Terrain::pebbles;
      segs.push_back({split, stop, t, slips(t)});
    }
  }
  return TerrainTrack(cx, cy, a, b, half_width, std::move(segs));
}

double TerrainTrack::ice_coverage() const {
  double ice = 0.0;
  for (const auto& s : segments_)
    if (s.terrain == Terrain::ice) ice += s.end - s.begin;
  return ice / kTwoPi;
}

Vec3 TerrainTrack::centerline(double t) const {
  const double c = std::cos(t);
  const double s = std::sin(t);
  return {cx_ + a_ * c, cy_ + b_ * s, std::atan2(b_ * c, -a_ * s)};
}

double TerrainTrack::arc_at(double t) const {
  t = wrap_param(t);
  const double h = kTwoPi / kArcIntervals;
  const int i = std::min(static_cast<int>(t / h), kArcIntervals - 1);
  return arc_[i] + simpson(a_, b_, i * h, t);
}

double TerrainTrack::param_at_arc(double s) const {
  const double len = length();
  s = std::fmod(s, len);
  if (s < 0.0) s += len;
  const auto it = std::upper_bound(arc_.begin(), arc_.end(), s);
  const int i = std::clamp(static_cast<int>(it - arc_.begin()) - 1, 0, kArcIntervals - 1);
  const double h = kTwoPi / kArcIntervals;
  double t = i * h + h * (s - arc_[i]) / (arc_[i + 1] - arc_[i]);
  for (int iter = 0; iter < 3; ++iter) t -= (arc_at(t) - s) / ellipse_speed(a_, b_, t);
  return wrap_param(t);
}

CenterlinePoint TerrainTrack::project(double x, double y) const {
  const double px = x - cx_;
  const double py = y - cy_;
  // coarse search, then Newton on the stationarity condition
  double best_t = 0.0;
  double best_d2 = std::numeric_limits<double>::infinity();
  const double h = kTwoPi / kCoarseProjection;
  for (int i = 0; i < kCoarseProjection; ++i) {
    const double t = i * h;
    const double dx = a_ * std::cos(t) - px;
    const double dy = b_ * std::sin(t) - py;
    const double d2 = dx * dx + dy * dy;
    if (d2 < best_d2) {
      best_d2 = d2;
      best_t = t;
    }
  }
  const double ab = b_ * b_ - a_ * a_;
  double t = best_t;
  for (int iter = 0; iter < 12; ++iter) {
    const double s = std::sin(t);
    const double c = std::cos(t);
    const double f = ab * s * c + a_ * px * s - b_ * py * c;
    const double fp = ab * (c * c - s * s) + a_ * px * c + b_ * py * s;
    if (!(fp > 0.0)) break;
    const double step = std::clamp(f / fp, -h, h);
    t -= step;
    if (std::abs(step) < 1e-13) break;
  }
  t = wrap_param(t);
  const double dx = px - a_ * std::cos(t);
  const double dy = py - b_ * std::sin(t);
  const double dist = std::hypot(dx, dy);
  const bool outside = (px / a_) * (px / a_) + (py / b_) * (py / b_) > 1.0;
  return {t, outside ? dist : -dist, arc_at(t)};
}

const TerrainSegment& TerrainTrack::segment_at(double t) const {
  t = wrap_param(t);
  const auto it = std::upper_bound(segments_.begin(), segments_.end(), t,
                                   [](double v, const TerrainSegment& s) { return v < s.begin; });
  return *(it == segments_.begin() ? it : std::prev(it));
}

TerrainSample terrain_at(double x, double y, const TerrainTrack& track) {
  const CenterlinePoint p = track.project(x, y);
  const TerrainSegment& seg = track.segment_at(p.t);
  return {seg.terrain, seg.slip, {seg.slip, p.signed_distance}};
}

std::vector<Action> default_actions() {
  constexpr double q = std::numbers::pi / 4.0;
  const std::array<double, 5> speeds{0.0, 2.0, 4.0, 6.0, 8.0};
  const std::array<double, 7> turns{0.0, -q, q, -2 * q, 2 * q, -3 * q, 3 * q};
  std::vector<Action> out;
  int id = 0;
  for (double v : speeds)
    for (double w : turns) out.push_back({id++, v, w});
  return out;
}

std::vector<int> action_ids(const std::vector<Action>& actions) {
  std::vector<int> ids;
  ids.reserve(actions.size());
  for (const auto& a : actions) ids.push_back(a.id);
  return ids;
}

bool is_aggressive(const Action& a) {
  constexpr double tol = 1e-9;
  return a.v >= 6.0 - tol && std::abs(a.omega) >= std::numbers::pi / 2.0 - tol;
}

const Action& most_conservative(const std::vector<Action>& actions) {
  if (actions.empty()) throw std::invalid_argument("most_conservative: empty action set");
  return *std::min_element(actions.begin(), actions.end(), [](const Action& l, const Action& r) {
    if (l.v != r.v) return l.v < r.v;
    if (std::abs(l.omega) != std::abs(r.omega)) return std::abs(l.omega) < std::abs(r.omega);
    return l.id < r.id;
  });
}

void VehicleParams::validate() const {
  if (!(dt > 0.0)) throw std::invalid_argument("vehicle: dt must be positive");
  if (!(base_noise.array() >= 0.0).all()) throw std::invalid_argument("vehicle: noise scales must be non-negative");
  if (!(slip_noise_gain >= 0.0)) throw std::invalid_argument("vehicle: slip_noise_gain must be non-negative");
  if (!(speed_attenuation >= 0.0 && speed_attenuation <= 1.0) ||
      !(turn_attenuation >= 0.0 && turn_attenuation <= 1.0))
    throw std::invalid_argument("vehicle: attenuations must be in [0, 1]");
}

void RewardParams::validate() const {
  if (!(off_track_penalty >= 0.0) || !(crash_penalty >= 0.0))
    throw std::invalid_argument("reward: penalties must be non-negative");
  if (!(crash_margin > 0.0)) throw std::invalid_argument("reward: crash_margin must be positive");
}

StepLaw step_law(const State& s, const Action& a, const TerrainTrack& track, const VehicleParams& params) {
  const double slip = terrain_at(s.x, s.y, track).slip;
  const double grip_loss = 1.0 - slip;
  const double v = a.v * (1.0 - params.speed_attenuation * grip_loss);
  const double w = a.omega * (1.0 - params.turn_attenuation * grip_loss);
  StepLaw law;
  law.mean = {v * std::cos(s.theta) * params.dt, v * std::sin(s.theta) * params.dt, w * params.dt};
  law.stddev = params.base_noise * (1.0 + params.slip_noise_gain * grip_loss * std::abs(a.v));
  return law;
}

State step(const State& s, const Action& a, const TerrainTrack& track, const VehicleParams& params, Rng& rng) {
  const StepLaw law = step_law(s, a, track, params);
  std::normal_distribution<double> n01(0.0, 1.0);
  Vec3 d = law.mean;
  for (int i = 0; i < kStateDim; ++i) {
    const double z = n01(rng);
    d[i] += law.stddev[i] * z;
  }
  return {s.x + d[0], s.y + d[1], s.theta + d[2]};
}

MomentPair true_moments(const State& s, const Action& a, const TerrainTrack& track,
                        const VehicleParams& params) {
  const StepLaw law = step_law(s, a, track, params);
  MomentPair m;
  m.mu = law.mean;
  m.sigma = law.mean * law.mean.transpose();
  m.sigma.diagonal() += law.stddev.cwiseAbs2();
  return m;
}

bool crashed(const State& s, const TerrainTrack& track, const RewardParams& params) {
  return std::abs(track.project(s.x, s.y).signed_distance) > track.half_width() + params.crash_margin;
}

double reward(const State& s, const Action&, const State& s_next, const TerrainTrack& track,
              const RewardParams& params) {
  const CenterlinePoint p0 = track.project(s.x, s.y);
  const CenterlinePoint p1 = track.project(s_next.x, s_next.y);
  const double progress = wrap_period(p1.arc - p0.arc, track.length());
  const double outside = std::abs(p1.signed_distance) - track.half_width();
  double r = progress;
  if (outside > 0.0) r -= params.off_track_penalty * outside;
  if (outside > params.crash_margin) r -= params.crash_penalty;
  return r;
}

double expected_reward(const State& s, const Action& a, const Vec3& mu, const Mat3& sigma,
                       const TerrainTrack& track, const RewardParams& params) {
  Mat3 cov = sigma - mu * mu.transpose();
  cov = 0.5 * (cov + cov.transpose());
  Eigen::SelfAdjointEigenSolver<Mat3> eig(cov);
  const Vec3 lambda = eig.eigenvalues().cwiseMax(0.0);
  double total = 0.0;
  for (int i = 0; i < kStateDim; ++i) {
    const Vec3 offset = std::sqrt(kStateDim * lambda[i]) * eig.eigenvectors().col(i);
    for (double sign : {1.0, -1.0}) {
      const Vec3 d = mu + sign * offset;
      total += reward(s, a, advance(s, {d[0], d[1], d[2]}), track, params);
    }
  }
  return total / (2.0 * kStateDim);
}

BasePolicy pure_pursuit(const TerrainTrack& track, const std::vector<Action>& actions,
                        const PursuitParams& params) {
  if (actions.empty()) throw std::invalid_argument("pure_pursuit: empty action set");
  if (!(params.lookahead > 0.0)) throw std::invalid_argument("pure_pursuit: lookahead must be positive");
  if (!(params.explore_rate >= 0.0 && params.explore_rate <= 1.0))
    throw std::invalid_argument("pure_pursuit: explore_rate must be in [0, 1]");
  double max_turn = 0.0;
  double turn_step = std::numeric_limits<double>::infinity();
  std::vector<double> speeds;
  for (const auto& a : actions) {
    max_turn = std::max(max_turn, std::abs(a.omega));
    if (std::abs(a.omega) > 0.0) turn_step = std::min(turn_step, std::abs(a.omega));
    speeds.push_back(a.v);
  }
  std::sort(speeds.begin(), speeds.end(), std::greater<>());
  speeds.erase(std::unique(speeds.begin(), speeds.end()), speeds.end());
  const double slack = std::isfinite(turn_step) ? 0.5 * turn_step : 0.0;

  return [&track, &actions, params, max_turn, slack, speeds](const State& s, const ContextFeature&,
                                                             Rng& rng) -> const Action& {
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    if (params.explore_rate > 0.0 && u01(rng) < params.explore_rate) {
      std::uniform_int_distribution<std::size_t> pick(0, actions.size() - 1);
      return actions[pick(rng)];
    }
    const CenterlinePoint p = track.project(s.x, s.y);
    const Vec3 target = track.centerline(track.param_at_arc(p.arc + params.lookahead));
    const double dx = target[0] - s.x;
    const double dy = target[1] - s.y;
    const double dist = std::max(std::hypot(dx, dy), 1e-6);
    const double err = wrap_angle(std::atan2(dy, dx) - s.theta);
    const double curvature = 2.0 * std::sin(err) / dist;
    for (double v : speeds) {
      if (v <= 0.0) continue;
      const double want = v * curvature;
      if (std::abs(want) > max_turn + slack) continue;
      const Action* best = nullptr;
      for (const auto& a : actions) {
        if (a.v != v) continue;
        if (!best || std::abs(a.omega - want) < std::abs(best->omega - want)) best = &a;
      }
      if (best) return *best;
    }
    // too sharp for any moving action: turn in place toward the target
    const Action* best = nullptr;
    const double want = err > 0.0 ? max_turn : -max_turn;
    for (const auto& a : actions) {
      if (a.v != speeds.back()) continue;
      if (!best || std::abs(a.omega - want) < std::abs(best->omega - want)) best = &a;
    }
    return *best;
  };
}

void BehaviorParams::validate() const {
  if (!(override_probability >= 0.0 && override_probability <= 1.0))
    throw std::invalid_argument("behavior: override_probability must be in [0, 1]");
  if (!(ice_slip_threshold > 0.0 && ice_slip_threshold <= 1.0))
    throw std::invalid_argument("behavior: ice_slip_threshold must be in (0, 1]");
}

const Action& behavior_policy(const State& s, const ContextFeature& c, Rng& rng,
                              const BasePolicy& base, const std::vector<Action>& actions,
                              const BehaviorParams& params) {
  if (c.empty()) throw std::invalid_argument("behavior_policy: feature must start with slip");
  const Action& a = base(s, c, rng);
  if (c[0] < params.ice_slip_threshold && is_aggressive(a)) {
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    if (u01(rng) < params.override_probability) return most_conservative(actions);
  }
  return a;
}

std::string to_string(CollectionMode m) {
  return m == CollectionMode::biased ? "biased" : "randomized";
}

CollectionMode parse_collection_mode(const std::string& name) {
  if (name == "biased") return CollectionMode::biased;
  if (name == "randomized") return CollectionMode::randomized;
  throw std::invalid_argument("unknown collection mode '" + name + "' (expected biased|randomized)");
}

State spawn(const TerrainTrack& track, Rng& rng, double heading_jitter) {
  std::uniform_real_distribution<double> arc(0.0, track.length());
  std::uniform_real_distribution<double> lateral(-0.5 * track.half_width(), 0.5 * track.half_width());
  std::normal_distribution<double> heading(0.0, heading_jitter);
  const double t = track.param_at_arc(arc(rng));
  const Vec3 c = track.centerline(t);
  // outward normal of a counter-clockwise ellipse
  const double nx = std::sin(c[2]);
  const double ny = -std::cos(c[2]);
  const double off = lateral(rng);
  return {c[0] + off * nx, c[1] + off * ny, c[2] + heading(rng)};
}

CollectedData collect_dataset(const TerrainTrack& track, const VehicleParams& vehicle,
                              const RewardParams& rewards, const std::vector<Action>& actions,
                              const CollectionConfig& cfg) {
  if (cfg.episodes < 1 || cfg.steps < 1) throw std::invalid_argument("collect_dataset: episodes and steps must be at least 1");
  if (actions.empty()) throw std::invalid_argument("collect_dataset: empty action set");
  vehicle.validate();
  rewards.validate();
  cfg.behavior.validate();
  if (!(cfg.spawn_heading_jitter >= 0.0)) throw std::invalid_argument("collect_dataset: negative heading jitter");
  const BasePolicy base = pure_pursuit(track, actions, cfg.pursuit);

  std::vector<std::vector<Sample>> per_episode(cfg.episodes);
  parallel_for(cfg.episodes, cfg.threads, [&](std::size_t ep) {
    Rng rng(derive_seed(cfg.seed, {0xC011ECu, ep}));
    std::uniform_int_distribution<std::size_t> pick(0, actions.size() - 1);
    auto& out = per_episode[ep];
    out.reserve(cfg.steps);
    State s = spawn(track, rng, cfg.spawn_heading_jitter);
    for (std::size_t t = 0; t < cfg.steps; ++t) {
      const TerrainSample terrain = terrain_at(s.x, s.y, track);
      const Action& a = cfg.mode == CollectionMode::biased
                            ? behavior_policy(s, terrain.feature, rng, base, actions, cfg.behavior)
                            : actions[pick(rng)];
      const State next = step(s, a, track, vehicle, rng);
      out.emplace_back(QueryPoint{s, terrain.feature}, a.id, next);
      s = crashed(next, track, rewards) ? spawn(track, rng, cfg.spawn_heading_jitter) : next;
    }
  });

  CollectedData data;
  std::vector<Sample> samples;
  samples.reserve(cfg.episodes * cfg.steps);
  for (std::size_t ep = 0; ep < cfg.episodes; ++ep) {
    for (std::size_t t = 0; t < per_episode[ep].size(); ++t) {
      samples.push_back(std::move(per_episode[ep][t]));
      data.index.push_back({ep, t});
    }
  }
  data.dataset = Dataset(std::move(samples));
  return data;
}

namespace {
std::vector<std::string> dataset_columns(std::size_t feature_dim) {
  std::vector<std::string> cols{"episode", "t", "x", "y", "theta"};
  for (std::size_t i = 0; i < feature_dim; ++i) cols.push_back("feat_" + std::to_string(i));
  cols.insert(cols.end(), {"action_id", "x_next", "y_next", "theta_next"});
  return cols;
}
}  // namespace

void write_dataset_csv(std::ostream& os, const CollectedData& data) {
  const Dataset& ds = data.dataset;
  if (data.index.size() != ds.size()) throw std::invalid_argument("dataset: index does not match samples");
  io::write_header(os, dataset_columns(ds.feature_dim()));
  using io::format_double;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const Sample& s = ds[i];
    os << data.index[i].episode << ',' << data.index[i].t << ',' << format_double(s.u.state.x) << ','
       << format_double(s.u.state.y) << ',' << format_double(s.u.state.theta);
    for (double f : s.u.feature) os << ',' << format_double(f);
    os << ',' << s.action_id << ',' << format_double(s.next_state.x) << ','
       << format_double(s.next_state.y) << ',' << format_double(s.next_state.theta) << '\n';
  }
}

CollectedData read_dataset_csv(std::istream& is) {
  std::string line;
  if (!io::next_line(is, line)) throw std::runtime_error("dataset: missing header");
  const auto header = io::split_csv(line);
  constexpr std::size_t fixed = 9;
  if (header.size() < fixed) throw std::runtime_error("dataset: header too short");
  const std::size_t feature_dim = header.size() - fixed;
  const auto cols = dataset_columns(feature_dim);
  for (std::size_t i = 0; i < cols.size(); ++i)
    if (header[i] != cols[i]) throw std::runtime_error("dataset: unexpected column '" + std::string(header[i]) + "'");

  CollectedData data;
  std::vector<Sample> samples;
  std::size_t row = 1;
  while (io::next_line(is, line)) {
    ++row;
    const auto f = io::split_csv(line);
    if (f.size() != cols.size()) throw std::runtime_error("dataset: malformed row " + std::to_string(row));
    const auto ep = static_cast<std::size_t>(io::parse_int(f[0]));
    const auto t = static_cast<std::size_t>(io::parse_int(f[1]));
    QueryPoint u{{io::parse_double(f[2]), io::parse_double(f[3]), io::parse_double(f[4])}, {}};
    for (std::size_t k = 0; k < feature_dim; ++k) u.feature.push_back(io::parse_double(f[5 + k]));
    const int action = static_cast<int>(io::parse_int(f[5 + feature_dim]));
    const State next{io::parse_double(f[6 + feature_dim]), io::parse_double(f[7 + feature_dim]),
                     io::parse_double(f[8 + feature_dim])};
    samples.emplace_back(std::move(u), action, next);
    data.index.push_back({ep, t});
  }
  if (samples.empty()) throw std::runtime_error("dataset: no rows");
  data.dataset = Dataset(std::move(samples));
  return data;
}

RolloutResult rollout(const StatePolicy& policy, const TerrainTrack& track,
                      const VehicleParams& vehicle, const RewardParams& rewards,
                      const std::vector<Action>& actions, std::size_t trials, std::size_t steps,
                      std::uint64_t seed, unsigned threads) {
  if (trials < 1 || steps < 1) throw std::invalid_argument("rollout: trials and steps must be at least 1");
  vehicle.validate();
  rewards.validate();
  RolloutResult result;
  result.trials.resize(trials);
  parallel_for(trials, threads, [&](std::size_t trial) {
    Rng rng(derive_seed(seed, {0x2011u, trial}));
    RolloutMetrics m;
    State s = spawn(track, rng);
    std::size_t aggressive = 0;
    for (std::size_t t = 0; t < steps; ++t) {
      const int id = policy(s, rng);
      const auto it = std::find_if(actions.begin(), actions.end(), [id](const Action& a) { return a.id == id; });
      if (it == actions.end()) throw std::runtime_error("rollout: policy returned unknown action " + std::to_string(id));
      const State next = step(s, *it, track, vehicle, rng);
      m.cumulative_reward += reward(s, *it, next, track, rewards);
      if (is_aggressive(*it)) ++aggressive;
      m.mean_speed += it->v;
      m.mean_abs_turn += std::abs(it->omega);
      if (crashed(next, track, rewards)) {
        m.crashes += 1.0;
        s = spawn(track, rng);
      } else {
        s = next;
      }
    }
    const double n = static_cast<double>(steps);
    m.aggressive_frequency = static_cast<double>(aggressive) / n;
    m.mean_speed /= n;
    m.mean_abs_turn /= n;
    m.steps = n;
    result.trials[trial] = m;
  });
  for (const auto& m : result.trials) {
    result.mean.cumulative_reward += m.cumulative_reward;
    result.mean.aggressive_frequency += m.aggressive_frequency;
    result.mean.mean_speed += m.mean_speed;
    result.mean.mean_abs_turn += m.mean_abs_turn;
    result.mean.steps += m.steps;
    result.mean.crashes += m.crashes;
  }
  const double k = static_cast<double>(trials);
  result.mean.cumulative_reward /= k;
  result.mean.aggressive_frequency /= k;
  result.mean.mean_speed /= k;
  result.mean.mean_abs_turn /= k;
  result.mean.steps /= k;
  result.mean.crashes /= k;
  return result;
}

}  // namespace causalnav
