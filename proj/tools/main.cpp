// causalnav: collect / estimate / plan / rollout / pipeline / sweep
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "causalnav/harness.hpp"
#include "causalnav/io.hpp"

namespace fs = std::filesystem;
using namespace causalnav;

namespace {

struct Overrides {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::string> method;
  std::optional<double> ice;
  std::optional<std::size_t> trials;
  std::optional<std::size_t> steps;
  std::optional<std::string> pessimism;
};

void add_common(CLI::App* app, Overrides& o) {
  app->add_option("--config", o.config, "experiment config file (key = value)");
  app->add_option("--seed", o.seed, "master seed");
  app->add_option("--out", o.out, "artifact directory");
  app->add_option("--method", o.method, "estimator")->check(CLI::IsMember({"regression", "ipw", "dr"}));
  app->add_option("--ice", o.ice, "ice coverage fraction")->check(CLI::Range(0.0, 1.0));
  app->add_option("--trials", o.trials, "rollout trials");
  app->add_option("--steps", o.steps, "steps per rollout trial");
  app->add_option("--pessimism", o.pessimism, "pessimistic planning")->check(CLI::IsMember({"on", "off"}));
}

ExperimentConfig resolve(const Overrides& o) {
  ExperimentConfig cfg = o.config.empty() ? ExperimentConfig{} : ExperimentConfig::load(o.config);
  if (o.seed) cfg.seed = *o.seed;
  if (o.out) cfg.out_dir = *o.out;
  if (o.method) cfg.set("estimator.method", *o.method);
  if (o.ice) {
    cfg.ice_coverage = *o.ice;
    cfg.track_segments.clear();
  }
  if (o.trials) cfg.trials = *o.trials;
  if (o.steps) cfg.steps = *o.steps;
  if (o.pessimism) cfg.set("pessimism.enabled", *o.pessimism);
  cfg.validate();
  return cfg;
}

template <typename Fn>
auto stage(const std::string& name, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(name, e.what());
  }
}

std::ifstream in_file(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  if (!is) throw std::runtime_error("cannot read " + p.string());
  return is;
}

std::ofstream out_file(const fs::path& p) {
  std::ofstream os(p, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + p.string());
  return os;
}

void persist_config(const ExperimentConfig& cfg) {
  fs::create_directories(cfg.out_dir);
  auto os = out_file(fs::path(cfg.out_dir) / "config.cfg");
  cfg.write(os);
}

CollectedData load_dataset(const fs::path& dir) {
  auto is = in_file(dir / "dataset.csv");
  return read_dataset_csv(is);
}

void cmd_collect(const ExperimentConfig& cfg) {
  stage("config", [&] { persist_config(cfg); });
  stage("collect", [&] {
    const TerrainTrack track = make_track(cfg);
    const CollectedData d = collect(cfg, track, cfg.collect_mode, stage_seed(cfg.seed, "collect"));
    auto os = out_file(fs::path(cfg.out_dir) / "dataset.csv");
    write_dataset_csv(os, d);
    std::cout << "collect: " << d.dataset.size() << " samples -> " << cfg.out_dir << "/dataset.csv\n";
  });
}

void cmd_estimate(const ExperimentConfig& cfg) {
  const fs::path dir(cfg.out_dir);
  const CollectedData d = stage("estimate", [&] { return load_dataset(dir); });
  stage("estimate", [&] {
    const TerrainTrack track = make_track(cfg);
    const SupportingSet supports = make_supports(cfg, track);
    const auto queries = support_queries(supports, track);
    const MomentTable table = estimate(cfg, queries, d.dataset, cfg.method);
    auto os = out_file(dir / "moments.csv");
    table.write_csv(os);
    std::cout << "estimate: " << table.supports() << " supports x " << table.action_count() << " actions ("
              << table.fallback_cells() << " fallback cells) -> " << (dir / "moments.csv").string() << '\n';
  });
}

void cmd_plan(const ExperimentConfig& cfg) {
  const fs::path dir(cfg.out_dir);
  stage("plan", [&] {
    const TerrainTrack track = make_track(cfg);
    const SupportingSet supports = make_supports(cfg, track);
    const auto queries = support_queries(supports, track);
    auto ms = in_file(dir / "moments.csv");
    const MomentTable table = MomentTable::read_csv(ms);
    std::optional<CollectedData> d;
    if (cfg.pessimism) d = load_dataset(dir);
    const auto r = plan(cfg, supports, queries, table, track, d ? &d->dataset : nullptr);
    auto os = out_file(dir / "policy.csv");
    write_policy_csv(os, supports, r.policy, r.value);
    std::cout << "plan: " << r.diagnostics.iterations << " iterations, "
              << (r.diagnostics.converged ? "converged" : "not converged") << " -> " << (dir / "policy.csv").string()
              << '\n';
  });
}

void cmd_rollout(const ExperimentConfig& cfg) {
  const fs::path dir(cfg.out_dir);
  stage("rollout", [&] {
    const TerrainTrack track = make_track(cfg);
    const SupportingSet supports = make_supports(cfg, track);
    auto is = in_file(dir / "policy.csv");
    const PolicyRecord rec = read_policy_csv(is);
    if (rec.states.size() != supports.size())
      throw std::runtime_error("policy.csv does not match the configured supporting grid");
    const RolloutResult r =
        evaluate(cfg, track, support_policy(supports, rec.policy), stage_seed(cfg.seed, "rollout"));
    auto os = out_file(dir / "metrics.csv");
    write_metrics_csv(os, r);
    std::cout << "rollout: mean reward " << io::format_double(r.mean.cumulative_reward) << ", aggressive "
              << io::format_double(r.mean.aggressive_frequency) << '\n';
  });
}

void cmd_pipeline(const ExperimentConfig& cfg, bool reuse) {
  const PipelineResult r = run_pipeline(cfg, reuse);
  std::cout << "pipeline: " << r.diagnostics.iterations << " planning iterations, " << r.fallback_cells
            << " fallback cells, mean reward " << io::format_double(r.rollout.mean.cumulative_reward)
            << ", aggressive " << io::format_double(r.rollout.mean.aggressive_frequency) << '\n';
}

void cmd_sweep(const ExperimentConfig& cfg) {
  const SweepReport report = stage("sweep", [&] { return sweep_ice(cfg, cfg.sweep_coverages, cfg.sweep_methods); });
  stage("report", [&] { write_sweep_outputs(cfg, report); });
  int failures = 0;
  for (const auto& c : report.cells) {
    std::cout << "ice " << io::format_double(c.coverage) << ' ' << c.method << ": ";
    if (!c.error.empty()) {
      std::cout << "FAILED " << c.error << '\n';
      ++failures;
      continue;
    }
    std::cout << "reward " << io::format_double(c.cumulative_reward.mean) << " +- "
              << io::format_double(c.cumulative_reward.stddev) << ", aggressive "
              << io::format_double(c.aggressive_frequency.mean) << '\n';
  }
  if (failures > 0) throw StageError("sweep", std::to_string(failures) + " cell(s) failed");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Causal transition-model estimation and kernel planning on a cross-terrain track"};
  app.require_subcommand(1);
  Overrides o;
  bool reuse = false;
  auto* c_collect = app.add_subcommand("collect", "log a transition dataset");
  auto* c_estimate = app.add_subcommand("estimate", "build the moment table from dataset.csv");
  auto* c_plan = app.add_subcommand("plan", "policy iteration on moments.csv");
  auto* c_rollout = app.add_subcommand("rollout", "evaluate policy.csv in the simulator");
  auto* c_pipeline = app.add_subcommand("pipeline", "collect, estimate, plan and roll out");
  auto* c_sweep = app.add_subcommand("sweep", "ice-coverage sweep over methods");
  for (auto* sub : {c_collect, c_estimate, c_plan, c_rollout, c_pipeline, c_sweep}) add_common(sub, o);
  c_pipeline->add_flag("--reuse-dataset", reuse, "load dataset.csv from --out instead of collecting");

  CLI11_PARSE(app, argc, argv);

  try {
    const ExperimentConfig cfg = stage("config", [&] { return resolve(o); });
    if (c_collect->parsed()) cmd_collect(cfg);
    else if (c_estimate->parsed()) cmd_estimate(cfg);
    else if (c_plan->parsed()) cmd_plan(cfg);
    else if (c_rollout->parsed()) cmd_rollout(cfg);
    else if (c_pipeline->parsed()) cmd_pipeline(cfg, reuse);
    else if (c_sweep->parsed()) cmd_sweep(cfg);
  } catch (const StageError& e) {
    std::cerr << "causalnav: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "causalnav: [internal] " << e.what() << '\n';
    return 3;
  }
  return 0;
}
