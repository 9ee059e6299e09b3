#include "causalnav/harness.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <numbers>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>
#include <type_traits>

#include <boost/math/distributions/students_t.hpp>

#include "causalnav/io.hpp"
#include "causalnav/parallel.hpp"

namespace causalnav {

namespace fs = std::filesystem;

namespace {

// ---- config schema --------------------------------------------------------

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(s);
  while (std::getline(is, cur, sep)) {
    cur = trim(cur);
    if (!cur.empty()) out.push_back(cur);
  }
  return out;
}

std::string to_text(double v) { return io::format_double(v); }
std::string to_text(int v) { return std::to_string(v); }
std::string to_text(unsigned v) { return std::to_string(v); }
std::string to_text(unsigned long v) { return std::to_string(v); }
std::string to_text(bool v) { return v ? "on" : "off"; }
std::string to_text(const std::string& v) { return v; }
std::string to_text(CollectionMode v) { return to_string(v); }
std::string to_text(EstimatorKind v) { return to_string(v); }
std::string to_text(KdeScope v) { return v == KdeScope::full ? "full" : "context_only"; }
std::string to_text(const std::vector<double>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + io::format_double(v[i]);
  return s;
}
std::string to_text(const std::vector<std::string>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + v[i];
  return s;
}

long long parse_integer(const std::string& s, long long lo) {
  const long long v = io::parse_int(s);
  if (v < lo) throw std::invalid_argument("value below " + std::to_string(lo));
  return v;
}

void from_text(const std::string& s, double& v) { v = io::parse_double(s); }
void from_text(const std::string& s, int& v) { v = static_cast<int>(io::parse_int(s)); }
void from_text(const std::string& s, unsigned& v) { v = static_cast<unsigned>(parse_integer(s, 0)); }
void from_text(const std::string& s, unsigned long& v) {
  // seeds use the full 64-bit range
  unsigned long out = 0;
  const auto* end = s.data() + s.size();
  const auto [ptr, ec] = std::from_chars(s.data(), end, out);
  if (ec != std::errc() || ptr != end) throw std::invalid_argument("not an unsigned integer: '" + s + "'");
  v = out;
}
void from_text(const std::string& s, bool& v) {
  if (s == "on" || s == "true" || s == "1") v = true;
  else if (s == "off" || s == "false" || s == "0") v = false;
  else throw std::invalid_argument("expected on|off, got '" + s + "'");
}
void from_text(const std::string& s, std::string& v) { v = s; }
void from_text(const std::string& s, CollectionMode& v) { v = parse_collection_mode(s); }
void from_text(const std::string& s, EstimatorKind& v) { v = parse_estimator(s); }
void from_text(const std::string& s, KdeScope& v) {
  if (s == "full") v = KdeScope::full;
  else if (s == "context_only") v = KdeScope::context_only;
  else throw std::invalid_argument("expected full|context_only, got '" + s + "'");
}
void from_text(const std::string& s, std::vector<double>& v) {
  v.clear();
  for (const auto& tok : split(s, ',')) v.push_back(io::parse_double(tok));
}
void from_text(const std::string& s, std::vector<std::string>& v) { v = split(s, ','); }

struct Field {
  std::string key;
  std::function<std::string(const ExperimentConfig&)> get;
  std::function<void(ExperimentConfig&, const std::string&)> set;
};

template <typename Access>
Field field(std::string key, Access access) {
  return {std::move(key),
          [access](const ExperimentConfig& c) { return to_text(access(const_cast<ExperimentConfig&>(c))); },
          [access](ExperimentConfig& c, const std::string& v) { from_text(v, access(c)); }};
}

const std::vector<Field>& schema() {
  static const std::vector<Field> fields = [] {
    using C = ExperimentConfig;
    std::vector<Field> f;
    f.push_back(field("seed", [](C& c) -> auto& { return c.seed; }));
    f.push_back(field("out_dir", [](C& c) -> auto& { return c.out_dir; }));
    f.push_back(field("threads", [](C& c) -> auto& { return c.threads; }));
    f.push_back(field("track.center_x", [](C& c) -> auto& { return c.track_center_x; }));
    f.push_back(field("track.center_y", [](C& c) -> auto& { return c.track_center_y; }));
    f.push_back(field("track.a", [](C& c) -> auto& { return c.track_a; }));
    f.push_back(field("track.b", [](C& c) -> auto& { return c.track_b; }));
    f.push_back(field("track.half_width", [](C& c) -> auto& { return c.track_half_width; }));
    f.push_back(field("track.ice_coverage", [](C& c) -> auto& { return c.ice_coverage; }));
    f.push_back(field("track.sectors", [](C& c) -> auto& { return c.track_sectors; }));
    f.push_back(field("track.segments", [](C& c) -> auto& { return c.track_segments; }));
    f.push_back(field("track.slip_ice", [](C& c) -> auto& { return c.slips.ice; }));
    f.push_back(field("track.slip_concrete", [](C& c) -> auto& { return c.slips.concrete; }));
    f.push_back(field("track.slip_pebbles", [](C& c) -> auto& { return c.slips.pebbles; }));
    f.push_back(field("vehicle.dt", [](C& c) -> auto& { return c.vehicle.dt; }));
    f.push_back(field("vehicle.noise_x", [](C& c) -> auto& { return c.vehicle.base_noise[0]; }));
    f.push_back(field("vehicle.noise_y", [](C& c) -> auto& { return c.vehicle.base_noise[1]; }));
    f.push_back(field("vehicle.noise_theta", [](C& c) -> auto& { return c.vehicle.base_noise[2]; }));
    f.push_back(field("vehicle.slip_noise_gain", [](C& c) -> auto& { return c.vehicle.slip_noise_gain; }));
    f.push_back(field("vehicle.speed_attenuation", [](C& c) -> auto& { return c.vehicle.speed_attenuation; }));
    f.push_back(field("vehicle.turn_attenuation", [](C& c) -> auto& { return c.vehicle.turn_attenuation; }));
    f.push_back(field("reward.off_track_penalty", [](C& c) -> auto& { return c.reward.off_track_penalty; }));
    f.push_back(field("reward.crash_margin", [](C& c) -> auto& { return c.reward.crash_margin; }));
    f.push_back(field("reward.crash_penalty", [](C& c) -> auto& { return c.reward.crash_penalty; }));
    f.push_back(field("collect.mode", [](C& c) -> auto& { return c.collect_mode; }));
    f.push_back(field("collect.episodes", [](C& c) -> auto& { return c.collect_episodes; }));
    f.push_back(field("collect.steps", [](C& c) -> auto& { return c.collect_steps; }));
    f.push_back(field("collect.lookahead", [](C& c) -> auto& { return c.pursuit.lookahead; }));
    f.push_back(field("collect.explore_rate", [](C& c) -> auto& { return c.pursuit.explore_rate; }));
    f.push_back(field("collect.spawn_heading_jitter", [](C& c) -> auto& { return c.spawn_heading_jitter; }));
    f.push_back(field("collect.ice_slip_threshold", [](C& c) -> auto& { return c.behavior.ice_slip_threshold; }));
    f.push_back(field("collect.override_probability", [](C& c) -> auto& { return c.behavior.override_probability; }));
    f.push_back(field("estimator.method", [](C& c) -> auto& { return c.method; }));
    f.push_back(field("estimator.k_neighbors", [](C& c) -> auto& { return c.estimator.k_neighbors; }));
    f.push_back(field("estimator.bandwidth", [](C& c) -> auto& { return c.estimator.bandwidth; }));
    f.push_back(field("estimator.propensity_floor", [](C& c) -> auto& { return c.estimator.propensity_floor; }));
    f.push_back(field("estimator.sigma_floor", [](C& c) -> auto& { return c.estimator.sigma_floor; }));
    f.push_back(field("estimator.kde_scope", [](C& c) -> auto& { return c.estimator.kde_scope; }));
    f.push_back(field("kernel.lengthscale_xy", [](C& c) -> auto& { return c.lengthscale_xy; }));
    f.push_back(field("kernel.lengthscale_theta", [](C& c) -> auto& { return c.lengthscale_theta; }));
    f.push_back(field("kernel.regularization", [](C& c) -> auto& { return c.regularization; }));
    f.push_back(field("supports.spacing", [](C& c) -> auto& { return c.support_spacing; }));
    f.push_back(field("supports.headings", [](C& c) -> auto& { return c.support_headings; }));
    f.push_back(field("solver.gamma", [](C& c) -> auto& { return c.gamma; }));
    f.push_back(field("solver.max_iterations", [](C& c) -> auto& { return c.max_iterations; }));
    f.push_back(field("pessimism.enabled", [](C& c) -> auto& { return c.pessimism; }));
    f.push_back(field("pessimism.radius", [](C& c) -> auto& { return c.pessimism_cfg.radius; }));
    f.push_back(field("pessimism.min_count", [](C& c) -> auto& { return c.pessimism_cfg.min_count; }));
    f.push_back(field("pessimism.penalty", [](C& c) -> auto& { return c.pessimism_cfg.penalty; }));
    f.push_back(field("rollout.trials", [](C& c) -> auto& { return c.trials; }));
    f.push_back(field("rollout.steps", [](C& c) -> auto& { return c.steps; }));
    f.push_back(field("sweep.coverages", [](C& c) -> auto& { return c.sweep_coverages; }));
    f.push_back(field("sweep.methods", [](C& c) -> auto& { return c.sweep_methods; }));
    return f;
  }();
  return fields;
}

std::vector<TerrainSegment> parse_segments(const std::string& text, const SlipTable& slips) {
  std::vector<TerrainSegment> segs;
  for (const auto& item : split(text, ';')) {
    const auto parts = split(item, ':');
    if (parts.size() != 3 && parts.size() != 4)
      throw std::invalid_argument("track.segments: expected terrain:begin:end[:slip], got '" + item + "'");
    auto angle = [](const std::string& s) { return s == "2pi" ? 2.0 * std::numbers::pi : io::parse_double(s); };
    TerrainSegment seg;
    seg.terrain = parse_terrain(parts[0]);
    seg.begin = angle(parts[1]);
    seg.end = angle(parts[2]);
    seg.slip = parts.size() == 4 ? io::parse_double(parts[3]) : slips(seg.terrain);
    segs.push_back(seg);
  }
  return segs;
}

std::string format_segments(const std::vector<TerrainSegment>& segs) {
  std::string s;
  for (std::size_t i = 0; i < segs.size(); ++i) {
    if (i) s += ';';
    s += to_string(segs[i].terrain) + ':' + io::format_double(segs[i].begin) + ':' +
         io::format_double(segs[i].end) + ':' + io::format_double(segs[i].slip);
  }
  return s;
}

const std::set<std::string>& known_methods() {
  static const std::set<std::string> m{"regression", "ipw", "dr", "randomized"};
  return m;
}

template <typename Fn>
auto run_stage(const std::string& stage, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(stage, e.what());
  }
}

std::ofstream open_out(const fs::path& p) {
  std::ofstream os(p, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + p.string());
  return os;
}

std::ifstream open_in(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  if (!is) throw std::runtime_error("cannot read " + p.string());
  return is;
}

std::uint64_t coverage_key(double coverage) {
  return static_cast<std::uint64_t>(std::llround(coverage * 1e6));
}

std::uint64_t text_key(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;  // FNV-1a
  for (unsigned char ch : s) h = (h ^ ch) * 1099511628211ULL;
  return h;
}

}  // namespace

// ---- ExperimentConfig -----------------------------------------------------

void ExperimentConfig::set(const std::string& key, const std::string& value) {
  for (const auto& f : schema()) {
    if (f.key != key) continue;
    try {
      f.set(*this, value);
    } catch (const std::exception& e) {
      throw std::invalid_argument("config key '" + key + "': " + e.what());
    }
    return;
  }
  throw std::invalid_argument("unknown config key '" + key + "'");
}

ExperimentConfig ExperimentConfig::parse(std::istream& is) {
  ExperimentConfig cfg;
  std::set<std::string> seen;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(std::string_view(line).substr(0, eq));
    const std::string value = trim(std::string_view(line).substr(eq + 1));
    if (!seen.insert(key).second)
      throw std::invalid_argument("config line " + std::to_string(lineno) + ": repeated key '" + key + "'");
    cfg.set(key, value);
  }
  return cfg;
}

ExperimentConfig ExperimentConfig::load(const fs::path& path) {
  auto is = open_in(path);
  return parse(is);
}

void ExperimentConfig::write(std::ostream& os) const {
  for (const auto& f : schema()) os << f.key << " = " << f.get(*this) << '\n';
}

std::vector<std::string> ExperimentConfig::keys() {
  std::vector<std::string> k;
  for (const auto& f : schema()) k.push_back(f.key);
  return k;
}

void ExperimentConfig::validate() const {
  auto require = [](bool ok, const char* key, const char* what) {
    if (!ok) throw std::invalid_argument(std::string("config key '") + key + "': " + what);
  };
  require(!out_dir.empty(), "out_dir", "must not be empty");
  require(track_a > 0.0, "track.a", "must be positive");
  require(track_b > 0.0, "track.b", "must be positive");
  require(track_half_width > 0.0, "track.half_width", "must be positive");
  require(ice_coverage >= 0.0 && ice_coverage <= 1.0, "track.ice_coverage", "must be in [0, 1]");
  require(track_sectors >= 1, "track.sectors", "must be at least 1");
  require(slips.ice > 0.0 && slips.ice <= 1.0, "track.slip_ice", "must be in (0, 1]");
  require(slips.concrete > 0.0 && slips.concrete <= 1.0, "track.slip_concrete", "must be in (0, 1]");
  require(slips.pebbles > 0.0 && slips.pebbles <= 1.0, "track.slip_pebbles", "must be in (0, 1]");
  vehicle.validate();
  reward.validate();
  pessimism_cfg.validate();
  behavior.validate();
  require(collect_episodes >= 1, "collect.episodes", "must be at least 1");
  require(collect_steps >= 1, "collect.steps", "must be at least 1");
  require(pursuit.lookahead > 0.0, "collect.lookahead", "must be positive");
  require(spawn_heading_jitter >= 0.0, "collect.spawn_heading_jitter", "must be non-negative");
  require(pursuit.explore_rate >= 0.0 && pursuit.explore_rate <= 1.0, "collect.explore_rate", "must be in [0, 1]");
  estimator.validate(default_actions().size());
  require(lengthscale_xy > 0.0, "kernel.lengthscale_xy", "must be positive");
  require(lengthscale_theta > 0.0, "kernel.lengthscale_theta", "must be positive");
  require(regularization > 0.0, "kernel.regularization", "must be positive");
  require(support_spacing > 0.0, "supports.spacing", "must be positive");
  require(support_headings >= 1, "supports.headings", "must be at least 1");
  require(gamma > 0.0 && gamma < 1.0, "solver.gamma", "must be in (0, 1)");
  require(max_iterations >= 1, "solver.max_iterations", "must be at least 1");
  require(trials >= 1, "rollout.trials", "must be at least 1");
  require(steps >= 1, "rollout.steps", "must be at least 1");
  for (double c : sweep_coverages) require(c >= 0.0 && c <= 1.0, "sweep.coverages", "entries must be in [0, 1]");
  for (const auto& m : sweep_methods)
    require(known_methods().count(m) == 1, "sweep.methods", "entries must be regression|ipw|dr|randomized");
  if (!track_segments.empty()) {
    const TerrainTrack t = make_track(*this);
    require(std::abs(t.ice_coverage() - ice_coverage) <= 1e-6, "track.segments",
            "ice arc does not match track.ice_coverage");
  }
}

// ---- stages ----------------------------------------------------------------

TerrainTrack make_track(const ExperimentConfig& cfg) {
  if (!cfg.track_segments.empty())
    return TerrainTrack(cfg.track_center_x, cfg.track_center_y, cfg.track_a, cfg.track_b,
                        cfg.track_half_width, parse_segments(cfg.track_segments, cfg.slips));
  return TerrainTrack::with_coverage(cfg.track_center_x, cfg.track_center_y, cfg.track_a, cfg.track_b,
                                     cfg.track_half_width, cfg.ice_coverage, cfg.track_sectors, cfg.slips);
}

KernelConfig make_kernel(const ExperimentConfig& cfg) {
  return KernelConfig::pose(cfg.lengthscale_xy, cfg.lengthscale_theta, cfg.regularization);
}

SupportingSet make_supports(const ExperimentConfig& cfg, const TerrainTrack& track) {
  const double reach = track.half_width() + cfg.reward.crash_margin;
  return SupportingSet::grid(track.cx() - track.a() - reach, track.cx() + track.a() + reach,
                             track.cy() - track.b() - reach, track.cy() + track.b() + reach,
                             cfg.support_spacing, cfg.support_headings, make_kernel(cfg));
}

std::vector<QueryPoint> support_queries(const SupportingSet& supports, const TerrainTrack& track) {
  std::vector<QueryPoint> q;
  q.reserve(supports.size());
  for (const State& s : supports.states()) q.push_back({s, terrain_at(s.x, s.y, track).feature});
  return q;
}

CollectedData collect(const ExperimentConfig& cfg, const TerrainTrack& track, CollectionMode mode,
                      std::uint64_t seed) {
  CollectionConfig cc;
  cc.mode = mode;
  cc.episodes = cfg.collect_episodes;
  cc.steps = cfg.collect_steps;
  cc.spawn_heading_jitter = cfg.spawn_heading_jitter;
  cc.seed = seed;
  cc.threads = cfg.threads;
  cc.pursuit = cfg.pursuit;
  cc.behavior = cfg.behavior;
  return collect_dataset(track, cfg.vehicle, cfg.reward, default_actions(), cc);
}

MomentTable estimate(const ExperimentConfig& cfg, std::span<const QueryPoint> queries,
                     const Dataset& dataset, EstimatorKind method) {
  EstimatorConfig ec = cfg.estimator;
  ec.threads = cfg.threads;
  const auto ids = action_ids(default_actions());
  return build_moment_table(queries, ids, dataset, method, ec);
}

MomentTable true_moment_table(const SupportingSet& supports, const std::vector<Action>& actions,
                              const TerrainTrack& track, const VehicleParams& vehicle) {
  MomentTable table(supports.size(), action_ids(actions), EstimatorKind::regression);
  for (std::size_t i = 0; i < supports.size(); ++i)
    for (std::size_t a = 0; a < actions.size(); ++a) {
      MomentPair m = true_moments(supports[i], actions[a], track, vehicle);
      m.support_count = 1;
      table.at(i, a) = m;
    }
  return table;
}

RewardMatrix model_rewards(const SupportingSet& supports, const MomentTable& table,
                           const std::vector<Action>& actions, const TerrainTrack& track,
                           const RewardParams& params, unsigned threads) {
  RewardMatrix r(static_cast<Eigen::Index>(supports.size()), static_cast<Eigen::Index>(table.action_count()));
  parallel_for(supports.size(), threads, [&](std::size_t i) {
    for (std::size_t a = 0; a < table.action_count(); ++a) {
      const int id = table.action_ids()[a];
      const auto it = std::find_if(actions.begin(), actions.end(), [id](const Action& x) { return x.id == id; });
      if (it == actions.end()) throw std::invalid_argument("model_rewards: table action not in action set");
      const MomentPair& cell = table.at(i, a);
      r(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(a)) =
          expected_reward(supports[i], *it, cell.mu, cell.sigma, track, params);
    }
  });
  return r;
}

PolicyIterationResult plan(const ExperimentConfig& cfg, const SupportingSet& supports,
                           std::span<const QueryPoint> queries, const MomentTable& table,
                           const TerrainTrack& track, const Dataset* dataset) {
  const RewardMatrix rewards = model_rewards(supports, table, default_actions(), track, cfg.reward, cfg.threads);
  if (!cfg.pessimism) return policy_iteration(supports, table, rewards, cfg.gamma, cfg.max_iterations);
  if (dataset == nullptr) throw std::invalid_argument("plan: pessimism needs the dataset");
  Pessimism p{build_unknown_mask(queries, table, *dataset, cfg.pessimism_cfg), cfg.pessimism_cfg.penalty};
  return policy_iteration(supports, table, rewards, cfg.gamma, cfg.max_iterations, &p);
}

StatePolicy support_policy(const SupportingSet& supports, const Policy& policy) {
  if (policy.size() != supports.size()) throw std::invalid_argument("support_policy: size mismatch");
  return [&supports, policy](const State& s, Rng&) { return policy.action_ids[supports.nearest(s)]; };
}

StatePolicy uniform_policy(const std::vector<Action>& actions) {
  const auto ids = action_ids(actions);
  return [ids](const State&, Rng& rng) {
    std::uniform_int_distribution<std::size_t> pick(0, ids.size() - 1);
    return ids[pick(rng)];
  };
}

RolloutResult evaluate(const ExperimentConfig& cfg, const TerrainTrack& track, const StatePolicy& policy,
                       std::uint64_t seed) {
  return rollout(policy, track, cfg.vehicle, cfg.reward, default_actions(), cfg.trials, cfg.steps, seed,
                 cfg.threads);
}

void write_metrics_csv(std::ostream& os, const RolloutResult& result) {
  io::write_header(os, {"trial", "cumulative_reward", "aggressive_frequency", "mean_speed", "mean_abs_turn",
                        "steps", "crashes"});
  auto row = [&os](const std::string& label, const RolloutMetrics& m) {
    using io::format_double;
    os << label << ',' << format_double(m.cumulative_reward) << ',' << format_double(m.aggressive_frequency)
       << ',' << format_double(m.mean_speed) << ',' << format_double(m.mean_abs_turn) << ','
       << format_double(m.steps) << ',' << format_double(m.crashes) << '\n';
  };
  for (std::size_t i = 0; i < result.trials.size(); ++i) row(std::to_string(i), result.trials[i]);
  row("mean", result.mean);
}

PipelineResult run_pipeline(const ExperimentConfig& cfg, bool reuse_dataset) {
  run_stage("config", [&] { cfg.validate(); });
  const fs::path out(cfg.out_dir);
  run_stage("config", [&] {
    fs::create_directories(out);
    auto os = open_out(out / "config.cfg");
    cfg.write(os);
  });
  const TerrainTrack track = run_stage("collect", [&] { return make_track(cfg); });

  const CollectedData data = run_stage("collect", [&] {
    if (reuse_dataset && fs::exists(out / "dataset.csv")) {
      auto is = open_in(out / "dataset.csv");
      return read_dataset_csv(is);
    }
    CollectedData d = collect(cfg, track, cfg.collect_mode, stage_seed(cfg.seed, "collect"));
    auto os = open_out(out / "dataset.csv");
    write_dataset_csv(os, d);
    return d;
  });
  run_stage("collect", [&] {
    ExperimentConfig t = cfg;
    t.track_segments = format_segments(track.segments());
    auto os = open_out(out / "track.cfg");
    for (const auto& key : ExperimentConfig::keys())
      if (key.rfind("track.", 0) == 0 || key.rfind("vehicle.", 0) == 0)
        for (const auto& f : schema())
          if (f.key == key) os << key << " = " << f.get(t) << '\n';
  });

  const SupportingSet supports = run_stage("estimate", [&] { return make_supports(cfg, track); });
  const auto queries = support_queries(supports, track);
  const MomentTable table = run_stage("estimate", [&] {
    MomentTable t = estimate(cfg, queries, data.dataset, cfg.method);
    auto os = open_out(out / "moments.csv");
    t.write_csv(os);
    return t;
  });

  const PolicyIterationResult planned = run_stage("plan", [&] {
    PolicyIterationResult r = plan(cfg, supports, queries, table, track, &data.dataset);
    auto os = open_out(out / "policy.csv");
    write_policy_csv(os, supports, r.policy, r.value);
    return r;
  });

  PipelineResult result;
  result.diagnostics = planned.diagnostics;
  result.fallback_cells = table.fallback_cells();
  result.rollout = run_stage("rollout", [&] {
    RolloutResult r = evaluate(cfg, track, support_policy(supports, planned.policy),
                               stage_seed(cfg.seed, "rollout"));
    auto os = open_out(out / "metrics.csv");
    write_metrics_csv(os, r);
    return r;
  });
  return result;
}

// ---- sweep -----------------------------------------------------------------

std::uint64_t stage_seed(std::uint64_t master, const std::string& stage) {
  return derive_seed(master, {text_key(stage)});
}

std::uint64_t sweep_seed(std::uint64_t master, double coverage, const std::string& method) {
  return derive_seed(master, {text_key("sweep"), coverage_key(coverage), text_key(method)});
}

std::uint64_t dataset_seed(std::uint64_t master, double coverage, CollectionMode mode) {
  return derive_seed(master, {text_key("dataset"), coverage_key(coverage), text_key(to_string(mode))});
}

const SweepCell& SweepReport::cell(double coverage, const std::string& method) const {
  for (const auto& c : cells)
    if (c.method == method && std::abs(c.coverage - coverage) < 1e-12) return c;
  throw std::out_of_range("sweep report: no cell for " + method);
}

SummaryStat summarize(const std::vector<double>& xs) {
  SummaryStat s;
  if (xs.empty()) return s;
  s.mean = std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
  if (xs.size() > 1) {
    double ss = 0.0;
    for (double x : xs) ss += (x - s.mean) * (x - s.mean);
    s.stddev = std::sqrt(ss / static_cast<double>(xs.size() - 1));
  }
  return s;
}

SweepReport sweep_ice(const ExperimentConfig& base, const std::vector<double>& coverages,
                      const std::vector<std::string>& methods) {
  base.validate();
  for (double c : coverages)
    if (!(c >= 0.0 && c <= 1.0)) throw std::invalid_argument("sweep: coverages must be in [0, 1]");
  for (const auto& m : methods)
    if (known_methods().count(m) == 0) throw std::invalid_argument("sweep: unknown method '" + m + "'");

  const std::size_t nc = coverages.size();
  const std::size_t nm = methods.size();
  const unsigned outer = std::min<unsigned>(resolve_threads(base.threads), static_cast<unsigned>(std::max<std::size_t>(1, nc * nm)));
  ExperimentConfig cfg = base;
  cfg.threads = outer > 1 ? 1 : base.threads;  // no nested oversubscription

  // geometry, supports and Gram factorization do not depend on coverage
  const TerrainTrack geometry = make_track(cfg);
  const SupportingSet supports = make_supports(cfg, geometry);

  struct PerCoverage {
    std::optional<TerrainTrack> track;
    std::vector<QueryPoint> queries;
    std::optional<CollectedData> biased, randomized;
    std::string error;
  };
  std::vector<PerCoverage> per(nc);
  const bool need_biased = std::any_of(methods.begin(), methods.end(), [](const auto& m) { return m != "randomized"; });
  const bool need_random = std::find(methods.begin(), methods.end(), "randomized") != methods.end();

  parallel_for(nc, outer, [&](std::size_t k) {
    PerCoverage& pc = per[k];
    try {
      ExperimentConfig c = cfg;
      c.ice_coverage = coverages[k];
      c.track_segments.clear();
      pc.track = make_track(c);
      pc.queries = support_queries(supports, *pc.track);
      if (need_biased)
        pc.biased = collect(c, *pc.track, CollectionMode::biased, dataset_seed(cfg.seed, coverages[k], CollectionMode::biased));
      if (need_random)
        pc.randomized = collect(c, *pc.track, CollectionMode::randomized,
                                dataset_seed(cfg.seed, coverages[k], CollectionMode::randomized));
    } catch (const std::exception& e) {
      pc.error = std::string("[collect] ") + e.what();
    }
  });

  SweepReport report;
  report.cells.resize(nc * nm);
  const fs::path out(cfg.out_dir);
  parallel_for(nc * nm, outer, [&](std::size_t idx) {
    const std::size_t k = idx / nm;
    const std::string& method = methods[idx % nm];
    SweepCell& cell = report.cells[idx];
    cell.coverage = coverages[k];
    cell.method = method;
    cell.seed = sweep_seed(cfg.seed, coverages[k], method);
    const PerCoverage& pc = per[k];
    if (!pc.error.empty()) {
      cell.error = pc.error;
      return;
    }
    try {
      const bool randomized = method == "randomized";
      const Dataset& ds = randomized ? pc.randomized->dataset : pc.biased->dataset;
      const EstimatorKind kind = randomized ? EstimatorKind::regression : parse_estimator(method);
      const MomentTable table = run_stage("estimate", [&] { return estimate(cfg, pc.queries, ds, kind); });
      const auto planned = run_stage("plan", [&] { return plan(cfg, supports, pc.queries, table, *pc.track, &ds); });
      const RolloutResult r = run_stage("rollout", [&] {
        return evaluate(cfg, *pc.track, support_policy(supports, planned.policy), cell.seed);
      });
      cell.trials = r.trials.size();
      std::vector<double> agg, speed, turn, steps, crashes;
      for (const auto& m : r.trials) {
        cell.rewards.push_back(m.cumulative_reward);
        agg.push_back(m.aggressive_frequency);
        speed.push_back(m.mean_speed);
        turn.push_back(m.mean_abs_turn);
        steps.push_back(m.steps);
        crashes.push_back(m.crashes);
      }
      cell.aggressive = agg;
      cell.cumulative_reward = summarize(cell.rewards);
      cell.aggressive_frequency = summarize(agg);
      cell.mean_speed = summarize(speed);
      cell.mean_abs_turn = summarize(turn);
      cell.steps = summarize(steps);
      cell.crashes = summarize(crashes);

      const fs::path dir = out / "sweep" / ("ice_" + io::format_double(coverages[k]) + "_" + method);
      fs::create_directories(dir);
      auto os = open_out(dir / "metrics.csv");
      write_metrics_csv(os, r);
    } catch (const std::exception& e) {
      cell.error = e.what();
    }
  });
  return report;
}

void write_sweep_csv(std::ostream& os, const SweepReport& report) {
  io::write_header(os, {"ice_coverage", "method", "metric", "mean", "stddev", "trials", "status"});
  for (const auto& c : report.cells) {
    const std::pair<const char*, const SummaryStat*> metrics[] = {
        {"cumulative_reward", &c.cumulative_reward}, {"aggressive_frequency", &c.aggressive_frequency},
        {"mean_speed", &c.mean_speed},               {"mean_abs_turn", &c.mean_abs_turn},
        {"steps", &c.steps},                         {"crashes", &c.crashes}};
    std::string status = c.error.empty() ? "ok" : c.error;
    std::replace(status.begin(), status.end(), ',', ';');
    std::replace(status.begin(), status.end(), '\n', ' ');
    for (const auto& [name, stat] : metrics)
      os << io::format_double(c.coverage) << ',' << c.method << ',' << name << ','
         << io::format_double(stat->mean) << ',' << io::format_double(stat->stddev) << ',' << c.trials << ','
         << status << '\n';
  }
}

void write_sweep_svg(std::ostream& os, const SweepReport& report, const std::string& metric) {
  auto stat_of = [&metric](const SweepCell& c) -> const SummaryStat& {
    if (metric == "cumulative_reward") return c.cumulative_reward;
    if (metric == "aggressive_frequency") return c.aggressive_frequency;
    throw std::invalid_argument("sweep svg: unsupported metric '" + metric + "'");
  };
  std::vector<std::string> methods;
  std::vector<double> xs;
  for (const auto& c : report.cells) {
    if (std::find(methods.begin(), methods.end(), c.method) == methods.end()) methods.push_back(c.method);
    if (std::find(xs.begin(), xs.end(), c.coverage) == xs.end()) xs.push_back(c.coverage);
  }
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (const auto& c : report.cells) {
    if (!c.error.empty()) continue;
    const auto& s = stat_of(c);
    const double se = c.trials > 0 ? s.stddev / std::sqrt(static_cast<double>(c.trials)) : 0.0;
    lo = std::min(lo, s.mean - se);
    hi = std::max(hi, s.mean + se);
  }
  if (!std::isfinite(lo)) lo = 0.0, hi = 1.0;
  if (hi - lo < 1e-9) lo -= 0.5, hi += 0.5;
  const double pad = 0.08 * (hi - lo);
  lo -= pad;
  hi += pad;

  constexpr double W = 640, H = 420, L = 70, R = 150, T = 30, B = 50;
  auto px = [&](double x) { return L + (x - 0.0) / 1.0 * (W - L - R); };
  auto py = [&](double y) { return T + (hi - y) / (hi - lo) * (H - T - B); };
  const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#7f7f7f", "#9467bd", "#8c564b"};
  using io::format_double;
  auto f = [](double v) { return format_double(std::round(v * 100.0) / 100.0); };

  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
     << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 5; ++i) {
    const double x = i / 5.0;
    os << "<text x=\"" << f(px(x)) << "\" y=\"" << H - B + 18 << "\" text-anchor=\"middle\">" << i * 20 << "%</text>\n";
    const double y = lo + (hi - lo) * i / 5.0;
    os << "<text x=\"" << L - 6 << "\" y=\"" << f(py(y) + 4) << "\" text-anchor=\"end\">" << format_double(std::round(y * 1000.0) / 1000.0)
       << "</text>\n";
    os << "<line x1=\"" << L << "\" y1=\"" << f(py(y)) << "\" x2=\"" << W - R << "\" y2=\"" << f(py(y))
       << "\" stroke=\"#e0e0e0\"/>\n";
  }
  os << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 10 << "\" text-anchor=\"middle\">ice coverage</text>\n";
  os << "<text x=\"16\" y=\"" << (T + H - B) / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 16 "
     << (T + H - B) / 2 << ")\">" << metric << "</text>\n";

  for (std::size_t m = 0; m < methods.size(); ++m) {
    const char* color = colors[m % std::size(colors)];
    std::string points;
    for (double x : xs) {
      for (const auto& c : report.cells) {
        if (c.method != methods[m] || c.coverage != x || !c.error.empty()) continue;
        const auto& s = stat_of(c);
        const double se = c.trials > 0 ? s.stddev / std::sqrt(static_cast<double>(c.trials)) : 0.0;
        points += f(px(x)) + "," + f(py(s.mean)) + " ";
        os << "<line x1=\"" << f(px(x)) << "\" y1=\"" << f(py(s.mean - se)) << "\" x2=\"" << f(px(x)) << "\" y2=\""
           << f(py(s.mean + se)) << "\" stroke=\"" << color << "\"/>\n";
        os << "<circle cx=\"" << f(px(x)) << "\" cy=\"" << f(py(s.mean)) << "\" r=\"3\" fill=\"" << color << "\"/>\n";
      }
    }
    os << "<polyline fill=\"none\" stroke-width=\"2\" stroke=\"" << color << "\" points=\"" << points << "\"/>\n";
    const double ly = T + 10 + 20.0 * static_cast<double>(m);
    os << "<line x1=\"" << W - R + 15 << "\" y1=\"" << ly << "\" x2=\"" << W - R + 40 << "\" y2=\"" << ly
       << "\" stroke-width=\"2\" stroke=\"" << color << "\"/>\n";
    os << "<text x=\"" << W - R + 46 << "\" y=\"" << ly + 4 << "\">" << methods[m] << "</text>\n";
  }
  os << "</svg>\n";
}

void write_sweep_outputs(const ExperimentConfig& cfg, const SweepReport& report) {
  const fs::path out(cfg.out_dir);
  fs::create_directories(out);
  {
    auto os = open_out(out / "config.cfg");
    cfg.write(os);
  }
  {
    auto os = open_out(out / "sweep.csv");
    write_sweep_csv(os, report);
  }
  {
    auto os = open_out(out / "reward_vs_ice.svg");
    write_sweep_svg(os, report, "cumulative_reward");
  }
  auto os = open_out(out / "aggressive_vs_ice.svg");
  write_sweep_svg(os, report, "aggressive_frequency");
}

// ---- statistics ------------------------------------------------------------

double normalized_score(double r_pi, double r_rand, double r_star) {
  const double denom = r_star - r_rand;
  if (!std::isfinite(denom) || std::abs(denom) < 1e-12)
    throw std::invalid_argument("normalized_score: R_star and R_rand must differ");
  return (r_pi - r_rand) / denom;
}

WelchTest welch_greater(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() < 2 || b.size() < 2) throw std::invalid_argument("welch: need at least two samples per group");
  const SummaryStat sa = summarize(a);
  const SummaryStat sb = summarize(b);
  const double va = sa.stddev * sa.stddev / static_cast<double>(a.size());
  const double vb = sb.stddev * sb.stddev / static_cast<double>(b.size());
  WelchTest w;
  const double se2 = va + vb;
  if (se2 <= 0.0) {
    w.t = sa.mean > sb.mean ? std::numeric_limits<double>::infinity() : 0.0;
    w.df = static_cast<double>(a.size() + b.size() - 2);
    w.p_value = sa.mean > sb.mean ? 0.0 : 1.0;
    return w;
  }
  w.t = (sa.mean - sb.mean) / std::sqrt(se2);
  w.df = se2 * se2 / (va * va / static_cast<double>(a.size() - 1) + vb * vb / static_cast<double>(b.size() - 1));
  const boost::math::students_t dist(w.df);
  w.p_value = boost::math::cdf(boost::math::complement(dist, w.t));
  return w;
}

}  // namespace causalnav
