#include <random>

#include <benchmark/benchmark.h>

#include "causalnav/harness.hpp"

using namespace causalnav;

namespace {

std::vector<State> random_states(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_real_distribution<double> p(-8.0, 8.0), a(-3.0, 3.0);
  std::vector<State> out;
  for (std::size_t i = 0; i < n; ++i) out.emplace_back(p(rng), p(rng), a(rng));
  return out;
}

void BM_KernelHessian(benchmark::State& state) {
  const auto cfg = KernelConfig::pose_default();
  const Eigen::Vector3d x(0.1, 0.2, 0.3), y(0.5, -0.4, 2.9);
  for (auto _ : state) benchmark::DoNotOptimize(kernel_hessian(x, y, cfg));
}
BENCHMARK(BM_KernelHessian);

void BM_GramFactor(benchmark::State& state) {
  const auto states = random_states(static_cast<std::size_t>(state.range(0)), 1);
  for (auto _ : state) benchmark::DoNotOptimize(SupportingSet(states, KernelConfig::pose_default()));
}
BENCHMARK(BM_GramFactor)->RangeMultiplier(2)->Range(128, 1024)->Unit(benchmark::kMillisecond);

void BM_EvaluatePolicy(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const SupportingSet sup(random_states(n, 2), KernelConfig::pose(1.0, 0.8, 3.0));
  MomentTable t(n, {0}, EstimatorKind::regression);
  for (std::size_t i = 0; i < n; ++i) {
    t.at(i, 0).mu = Vec3(0.4, 0.0, 0.05);
    t.at(i, 0).sigma = t.at(i, 0).mu * t.at(i, 0).mu.transpose() + 1e-3 * Mat3::Identity();
  }
  const Policy p{std::vector<int>(n, 0)};
  const Eigen::MatrixXd m = assemble_generator(sup, p, t, 0.9);
  const Eigen::VectorXd r = Eigen::VectorXd::Ones(static_cast<Eigen::Index>(n));
  for (auto _ : state) benchmark::DoNotOptimize(evaluate_policy(m, sup.gram(), 0.9, r));
}
BENCHMARK(BM_EvaluatePolicy)->RangeMultiplier(2)->Range(128, 1024)->Unit(benchmark::kMillisecond);

struct TrackFixture {
  ExperimentConfig cfg;
  TerrainTrack track = make_track(cfg);
  CollectedData data;

  TrackFixture() {
    cfg.threads = 1;
    data = collect(cfg, track, CollectionMode::biased, 3);
  }
};

const TrackFixture& fixture() {
  static const TrackFixture f;
  return f;
}

void BM_MemberPropensities(benchmark::State& state) {
  const auto& f = fixture();
  const auto ids = action_ids(default_actions());
  const auto nb = select_neighborhood(f.data.dataset[100].u, f.data.dataset, static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(member_propensities(nb, f.data.dataset, ids, 0.5, 0.01));
}
BENCHMARK(BM_MemberPropensities)->Arg(50)->Arg(200);

void BM_MomentTable(benchmark::State& state) {
  const auto& f = fixture();
  const auto kind = static_cast<EstimatorKind>(state.range(0));
  const auto ids = action_ids(default_actions());
  std::vector<QueryPoint> q;
  for (std::size_t i = 0; i < 64; ++i) q.push_back(f.data.dataset[i * 97].u);
  EstimatorConfig ec = f.cfg.estimator;
  ec.threads = 1;
  for (auto _ : state) benchmark::DoNotOptimize(build_moment_table(q, ids, f.data.dataset, kind, ec));
  state.SetLabel(to_string(kind));
}
BENCHMARK(BM_MomentTable)
    ->Arg(static_cast<int>(EstimatorKind::regression))
    ->Arg(static_cast<int>(EstimatorKind::ipw))
    ->Arg(static_cast<int>(EstimatorKind::dr))
    ->Unit(benchmark::kMillisecond);

void BM_SimulatorStep(benchmark::State& state) {
  const auto& f = fixture();
  const auto acts = default_actions();
  Rng rng(4);
  State s{6.0, 0.0, 1.57};
  for (auto _ : state) {
    s = step(s, acts[12], f.track, f.cfg.vehicle, rng);
    if (std::abs(s.x) > 20 || std::abs(s.y) > 20) s = {6.0, 0.0, 1.57};
    benchmark::DoNotOptimize(s);
  }
}
BENCHMARK(BM_SimulatorStep);

}  // namespace

BENCHMARK_MAIN();
