#include <cmath>
#include <optional>
#include <random>
#include <sstream>

#include <Eigen/LU>
#include <gtest/gtest.h>

#include "causalnav/mdp.hpp"
#include "causalnav/rng.hpp"

namespace causalnav {

void PrintTo(const Policy& p, std::ostream* os) {
  for (int a : p.action_ids) *os << a << ' ';
}

namespace {

KernelConfig pose_kernel(double lambda = 1e-3) { return KernelConfig::pose(1.0, 0.8, lambda); }

SupportingSet random_supports(std::size_t n, std::uint64_t seed, double lambda = 1e-3) {
  Rng rng(seed);
  std::uniform_real_distribution<double> p(-2.0, 2.0), a(-3.0, 3.0);
  std::vector<State> states;
  for (std::size_t i = 0; i < n; ++i) states.emplace_back(p(rng), p(rng), a(rng));
  return SupportingSet(std::move(states), pose_kernel(lambda));
}

MomentTable random_table(std::size_t supports, std::size_t actions, std::uint64_t seed) {
  std::vector<int> ids;
  for (std::size_t a = 0; a < actions; ++a) ids.push_back(static_cast<int>(a));
  MomentTable t(supports, ids, EstimatorKind::regression);
  Rng rng(seed);
  std::normal_distribution<double> g(0.0, 0.3);
  for (std::size_t s = 0; s < supports; ++s)
    for (std::size_t a = 0; a < actions; ++a) {
      auto& c = t.at(s, a);
      c.mu = Vec3(g(rng), g(rng), g(rng));
      Mat3 l;
      for (int r = 0; r < 3; ++r)
        for (int k = 0; k < 3; ++k) l(r, k) = 0.3 * g(rng);
      c.sigma = l * l.transpose() + c.mu * c.mu.transpose() + 1e-4 * Mat3::Identity();
      c.support_count = 5;
    }
  return t;
}

// (M (lambda I + K)^{-1} - (1 - gamma) I) V = -R solved densely from scratch
Eigen::VectorXd dense_oracle(const Eigen::MatrixXd& m, const GramSystem& g, double gamma, const Eigen::VectorXd& r) {
  Eigen::MatrixXd a = g.gram();
  a.diagonal().array() += g.config().regularization();
  const Eigen::MatrixXd a_inv = a.fullPivLu().inverse();
  Eigen::MatrixXd sys = m * a_inv;
  sys.diagonal().array() -= (1.0 - gamma);
  return sys.fullPivLu().solve(-r);
}

TEST(Generator, ZeroMomentsGiveZeroMatrix) {
  const auto sup = random_supports(6, 1);
  MomentTable t(6, {0, 1}, EstimatorKind::regression);
  Policy p{{0, 1, 0, 1, 0, 1}};
  EXPECT_EQ(assemble_generator(sup, p, t, 0.9).cwiseAbs().maxCoeff(), 0.0);
}

TEST(Generator, LinearInMuAndMatchesRowOracle) {
  const auto sup = random_supports(7, 2);
  auto t = random_table(7, 2, 3);
  for (std::size_t s = 0; s < 7; ++s)
    for (std::size_t a = 0; a < 2; ++a) t.at(s, a).sigma.setZero();
  Policy p{{0, 1, 1, 0, 0, 1, 0}};
  const Eigen::MatrixXd m = assemble_generator(sup, p, t, 0.9);
  for (std::size_t i = 0; i < 7; ++i) {
    const auto& c = t.at(i, static_cast<std::size_t>(p.action_ids[i]));
    const Eigen::RowVectorXd row = generator_row(c.mu, c.sigma, sup[i].as_vector(), sup.gram().supports(),
                                                 sup.gram().config(), 0.9);
    EXPECT_LT((m.row(static_cast<Eigen::Index>(i)) - row).cwiseAbs().maxCoeff(), 1e-15);
  }
  auto doubled = t;
  for (std::size_t s = 0; s < 7; ++s)
    for (std::size_t a = 0; a < 2; ++a) doubled.at(s, a).mu *= 2.0;
  EXPECT_LT((assemble_generator(sup, p, doubled, 0.9) - 2.0 * m).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(Evaluate, ClosedFormWithoutDynamics) {
  const auto sup = random_supports(5, 4);
  const Eigen::MatrixXd m = Eigen::MatrixXd::Zero(5, 5);
  const auto v = evaluate_policy(m, sup.gram(), 0.9, Eigen::VectorXd::Ones(5));
  EXPECT_LE((v.values.array() - 10.0).abs().maxCoeff(), 1e-10);
  const auto z = evaluate_policy(m, sup.gram(), 0.9, Eigen::VectorXd::Zero(5));
  EXPECT_EQ(z.values.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Evaluate, MatchesDenseOracleOnRandomSystems) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto sup = random_supports(8, 10 + seed);
    const auto t = random_table(8, 3, 50 + seed);
    Policy p;
    for (std::size_t i = 0; i < 8; ++i) p.action_ids.push_back(static_cast<int>((i + seed) % 3));
    const Eigen::MatrixXd m = assemble_generator(sup, p, t, 0.9);
    const Eigen::VectorXd r = Eigen::VectorXd::LinSpaced(8, -1.0, 1.0);
    double residual = 1.0;
    const auto v = evaluate_policy(m, sup.gram(), 0.9, r, &residual);
    EXPECT_LE(residual, 1e-8 * (1.0 + r.lpNorm<Eigen::Infinity>()));
    const Eigen::VectorXd oracle = dense_oracle(m, sup.gram(), 0.9, r);
    EXPECT_LE((v.values - oracle).lpNorm<Eigen::Infinity>(), 1e-8 * (1.0 + oracle.lpNorm<Eigen::Infinity>()))
        << "seed " << seed;
    // the cached weights reproduce V
    Eigen::MatrixXd a = sup.gram().gram();
    a.diagonal().array() += sup.gram().config().regularization();
    EXPECT_LE((a * v.weights - v.values).lpNorm<Eigen::Infinity>(), 1e-10);
  }
}

TEST(Evaluate, RejectsBadGamma) {
  const auto sup = random_supports(3, 4);
  EXPECT_THROW(evaluate_policy(Eigen::MatrixXd::Zero(3, 3), sup.gram(), 1.0, Eigen::VectorXd::Ones(3)),
               std::invalid_argument);
}

TEST(Interpolate, ReproducesSupportValuesWithoutRegularization) {
  // well separated supports keep K invertible at lambda = 0
  std::vector<State> states{{0, 0, 0}, {3, 0, 0}, {0, 3, 1}, {3, 3, -2}};
  const SupportingSet sup(states, pose_kernel(0.0));
  ValueField v;
  v.values = Eigen::Vector4d(1.0, -2.0, 0.5, 3.0);
  v.weights = sup.gram().solve(v.values);
  for (std::size_t i = 0; i < 4; ++i)
    EXPECT_NEAR(interpolate_value(sup[i], v, sup.gram()), v.values[static_cast<Eigen::Index>(i)], 1e-10);
  EXPECT_LE(std::abs(interpolate_value({40, 40, 0}, v, sup.gram())), 1e-10 * v.weights.lpNorm<1>());
}

TEST(ValueDerivatives, ZeroFieldAndFiniteDifferences) {
  const auto sup = random_supports(10, 7);
  ValueField v;
  v.values = Eigen::VectorXd::Zero(10);
  v.weights = Eigen::VectorXd::Zero(10);
  const auto z = value_derivatives({0.1, 0.2, 0.3}, v, sup.gram());
  EXPECT_EQ(z.gradient.cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(z.hessian.cwiseAbs().maxCoeff(), 0.0);

  v.values = Eigen::VectorXd::LinSpaced(10, -2.0, 3.0);
  v.weights = sup.gram().solve(v.values);
  const State s{0.3, -0.4, 0.9};
  const auto d = value_derivatives(s, v, sup.gram());
  const double h = 1e-5;
  for (int k = 0; k < 3; ++k) {
    Vec3 p = s.as_vector(), m = s.as_vector();
    p[k] += h;
    m[k] -= h;
    const double fd = (interpolate_value(State::from_vector(p), v, sup.gram()) -
                       interpolate_value(State::from_vector(m), v, sup.gram())) / (2 * h);
    EXPECT_NEAR(d.gradient[k], fd, 1e-5 * std::max(1.0, std::abs(fd)));
    const Eigen::VectorXd gfd = (value_derivatives(State::from_vector(p), v, sup.gram()).gradient -
                                 value_derivatives(State::from_vector(m), v, sup.gram()).gradient) / (2 * h);
    for (int j = 0; j < 3; ++j) EXPECT_NEAR(d.hessian(j, k), gfd[j], 1e-5 * std::max(1.0, std::abs(gfd[j])));
  }
}

TEST(ValueDerivatives, GradientVanishesAtPeak) {
  const SupportingSet sup({{0, 0, 0}}, pose_kernel());
  ValueField v;
  v.values = Eigen::VectorXd::Ones(1);
  v.weights = sup.gram().solve(v.values);
  EXPECT_LT(value_derivatives({0, 0, 0}, v, sup.gram()).gradient.norm(), 1e-15);
}

TEST(Improve, RewardDominanceAndTies) {
  const auto sup = random_supports(4, 9);
  MomentTable t(4, {3, 5}, EstimatorKind::regression);
  ValueField v;
  v.values = Eigen::VectorXd::LinSpaced(4, 0.0, 1.0);
  v.weights = sup.gram().solve(v.values);
  RewardMatrix r(4, 2);
  r << 1.0, 0.5, 0.0, 0.3, 0.2, 0.2, -1.0, -1.0;
  const auto p = improve_policy(v, sup, t, r, 0.9);
  EXPECT_EQ(p.action_ids, (std::vector<int>{3, 5, 3, 3}));
}

TEST(Improve, MatchesBruteForceScores) {
  const auto sup = random_supports(12, 13);
  const auto t = random_table(12, 4, 14);
  ValueField v;
  v.values = Eigen::VectorXd::LinSpaced(12, -1.0, 2.0);
  v.weights = sup.gram().solve(v.values);
  Rng rng(15);
  std::normal_distribution<double> g(0.0, 1.0);
  RewardMatrix r(12, 4);
  for (Eigen::Index i = 0; i < r.size(); ++i) r.data()[i] = g(rng);
  const auto p = improve_policy(v, sup, t, r, 0.9);
  for (std::size_t i = 0; i < 12; ++i) {
    const auto d = value_derivatives(sup[i], v, sup.gram());
    int best = -1;
    double best_score = -INFINITY;
    for (std::size_t a = 0; a < 4; ++a) {
      const auto& c = t.at(i, a);
      const double score = r(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(a)) +
                           0.9 * (c.mu.dot(d.gradient) + 0.5 * (c.sigma * d.hessian).trace());
      if (score > best_score) {
        best_score = score;
        best = static_cast<int>(a);
      }
    }
    EXPECT_EQ(p.action_ids[i], best) << "support " << i;
  }
}

TEST(Improve, InvariantToPerSupportRewardShift) {
  const auto sup = random_supports(10, 16);
  const auto t = random_table(10, 3, 17);
  ValueField v;
  v.values = Eigen::VectorXd::LinSpaced(10, 0.0, 4.0);
  v.weights = sup.gram().solve(v.values);
  RewardMatrix r = RewardMatrix::Random(10, 3);
  RewardMatrix shifted = r;
  for (Eigen::Index i = 0; i < 10; ++i) shifted.row(i).array() += 3.0 * static_cast<double>(i) - 7.0;
  EXPECT_EQ(improve_policy(v, sup, t, r, 0.9), improve_policy(v, sup, t, shifted, 0.9));
}

// Two supports one lengthscale apart. Action 0 drifts toward +x, action 1 stays.
struct ToyInstance {
  SupportingSet sup{{{0, 0, 0}, {1, 0, 0}}, pose_kernel()};
  MomentTable table{2, {0, 1}, EstimatorKind::regression};
  RewardMatrix rewards{2, 2};

  ToyInstance(double drift, double r00, double r01, double r10, double r11) {
    for (std::size_t s = 0; s < 2; ++s) {
      table.at(s, 0).mu = Vec3(drift, 0, 0);
      table.at(s, 0).sigma = table.at(s, 0).mu * table.at(s, 0).mu.transpose() + 0.01 * Mat3::Identity();
      table.at(s, 1).sigma = 0.01 * Mat3::Identity();
    }
    rewards << r00, r01, r10, r11;
  }

  Eigen::VectorXd dense_value(const Policy& p, double gamma) const {
    const Eigen::MatrixXd m = assemble_generator(sup, p, table, gamma);
    const Eigen::Vector2d r(rewards(0, p.action_ids[0]), rewards(1, p.action_ids[1]));
    return dense_oracle(m, sup.gram(), gamma, r);
  }

  // The policy whose value is at least every other's at both supports, if any.
  std::optional<Policy> dominant(double gamma) const {
    std::vector<Policy> all;
    std::vector<Eigen::VectorXd> values;
    for (int a0 = 0; a0 < 2; ++a0)
      for (int a1 = 0; a1 < 2; ++a1) {
        all.push_back(Policy{{a0, a1}});
        values.push_back(dense_value(all.back(), gamma));
      }
    for (std::size_t p = 0; p < all.size(); ++p) {
      bool best = true;
      for (const auto& v : values) best &= (values[p].array() >= v.array() - 1e-12).all();
      if (best) return all[p];
    }
    return std::nullopt;
  }

  // Every deterministic policy that is greedy against its own densely solved value.
  std::vector<Policy> fixed_points(double gamma) const {
    std::vector<Policy> out;
    for (int a0 = 0; a0 < 2; ++a0)
      for (int a1 = 0; a1 < 2; ++a1) {
        Policy p{{a0, a1}};
        ValueField v;
        v.values = dense_value(p, gamma);
        v.weights = sup.gram().solve(v.values);
        bool greedy = true;
        for (std::size_t i = 0; i < 2; ++i) {
          const auto d = value_derivatives(sup[i], v, sup.gram());
          double score[2];
          for (std::size_t a = 0; a < 2; ++a) {
            const auto& c = table.at(i, a);
            score[a] = rewards(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(a)) +
                       gamma * (c.mu.dot(d.gradient) + 0.5 * (c.sigma * d.hessian).trace());
          }
          greedy &= p.action_ids[i] == (score[1] > score[0] ? 1 : 0);
        }
        if (greedy) out.push_back(p);
      }
    return out;
  }
};

TEST(PolicyIteration, MatchesExhaustiveEnumeration) {
  const ToyInstance cases[] = {
      {0.5, 0.0, 0.2, 0.0, 1.0},
      {0.5, 0.3, 0.0, 0.0, 1.0},
      {-0.4, 0.0, 0.5, 1.0, 0.0},
      {0.2, 0.1, 0.1, 0.4, 0.4},
      {0.8, -0.5, 0.0, 0.2, 0.1},
  };
  for (std::size_t k = 0; k < std::size(cases); ++k) {
    const auto& c = cases[k];
    const auto res = policy_iteration(c.sup, c.table, c.rewards, 0.9, 50);
    const auto fp = c.fixed_points(0.9);
    EXPECT_TRUE(res.diagnostics.converged) << "case " << k;
    ASSERT_EQ(fp.size(), 1u) << "case " << k;
    EXPECT_EQ(res.policy, fp[0]) << "case " << k;
    // the first three have a policy that is best at both supports
    if (k < 3) {
      const auto best = c.dominant(0.9);
      ASSERT_TRUE(best.has_value()) << "case " << k;
      EXPECT_EQ(res.policy, *best) << "case " << k;
    }
  }
}

TEST(PolicyIteration, FindsTheDominantPolicyOnRandomToys) {
  Rng rng(77);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  int dominated = 0;
  for (int k = 0; k < 300; ++k) {
    const ToyInstance c(u(rng), u(rng), u(rng), u(rng), u(rng));
    const auto best = c.dominant(0.9);
    if (!best) continue;
    ++dominated;
    EXPECT_EQ(policy_iteration(c.sup, c.table, c.rewards, 0.9, 50).policy, *best) << "instance " << k;
  }
  EXPECT_GT(dominated, 50);
}

TEST(PolicyIteration, SingleActionConvergesImmediately) {
  const auto sup = random_supports(6, 20);
  const auto t = random_table(6, 1, 21);
  const RewardMatrix r = RewardMatrix::Ones(6, 1);
  const auto res = policy_iteration(sup, t, r, 0.9, 50);
  EXPECT_TRUE(res.diagnostics.converged);
  EXPECT_EQ(res.diagnostics.iterations, 1u);
  EXPECT_EQ(res.policy.action_ids, std::vector<int>(6, 0));
}

TEST(PolicyIteration, ZeroMomentsGiveGreedyPolicy) {
  const auto sup = random_supports(6, 22);
  MomentTable t(6, {0, 1, 2}, EstimatorKind::regression);
  const RewardMatrix r = RewardMatrix::Random(6, 3);
  const auto res = policy_iteration(sup, t, r, 0.9, 50);
  for (Eigen::Index i = 0; i < 6; ++i) {
    Eigen::Index best = 0;
    r.row(i).maxCoeff(&best);
    EXPECT_EQ(res.policy.action_ids[static_cast<std::size_t>(i)], static_cast<int>(best));
  }
}

TEST(PolicyIteration, RecordsDiagnosticsAndRejectsZeroIterations) {
  const auto sup = random_supports(8, 23);
  const auto t = random_table(8, 3, 24);
  const RewardMatrix r = RewardMatrix::Random(8, 3);
  const auto res = policy_iteration(sup, t, r, 0.9, 50);
  EXPECT_EQ(res.diagnostics.residuals.size(), res.diagnostics.iterations);
  EXPECT_EQ(res.diagnostics.policy_changes.size(), res.diagnostics.iterations);
  for (double x : res.diagnostics.residuals) EXPECT_LE(x, 1e-8 * (1.0 + r.cwiseAbs().maxCoeff()));
  EXPECT_THROW(policy_iteration(sup, t, r, 0.9, 0), std::invalid_argument);
}

TEST(Pessimism, NeverPicksUnknownWhenKnownExists) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto sup = random_supports(10, 30 + seed);
    const auto t = random_table(10, 4, 40 + seed);
    RewardMatrix r = RewardMatrix::Random(10, 4);
    Pessimism p;
    p.mask.action_count = 4;
    p.penalty = 0.5;  // deliberately too small to matter on its own
    Rng rng(seed);
    std::bernoulli_distribution flag(0.5);
    for (std::size_t i = 0; i < 40; ++i) p.mask.flags.push_back(flag(rng));
    // the unknown cells look great
    for (std::size_t i = 0; i < 10; ++i)
      for (std::size_t a = 0; a < 4; ++a)
        if (p.mask(i, a)) r(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(a)) += 100.0;
    const auto res = policy_iteration(sup, t, r, 0.9, 50, &p);
    for (std::size_t i = 0; i < 10; ++i) {
      bool any_known = false;
      for (std::size_t a = 0; a < 4; ++a) any_known |= !p.mask(i, a);
      if (any_known) {
        EXPECT_FALSE(p.mask(i, t.action_index(res.policy.action_ids[i]))) << "support " << i;
      }
    }
  }
}

TEST(Pessimism, PenaltyAppliesOnlyToUnknownCells) {
  Pessimism p;
  p.mask.action_count = 2;
  p.mask.flags = {true, false, false, true};
  p.penalty = 3.0;
  const RewardMatrix r = RewardMatrix::Ones(2, 2);
  const auto pr = penalized_rewards(r, &p);
  EXPECT_EQ(pr(0, 0), -2.0);
  EXPECT_EQ(pr(0, 1), 1.0);
  EXPECT_EQ(pr(1, 0), 1.0);
  EXPECT_EQ(pr(1, 1), -2.0);
  EXPECT_EQ(penalized_rewards(r, nullptr), r);
}

TEST(FlagUnknown, ExamplesAndLinearScanOracle) {
  PessimismConfig cfg;
  cfg.radius = 0.8;
  cfg.min_count = 1;
  EXPECT_TRUE(flag_unknown({{0, 0, 0}, {0.0}}, 0, Dataset{}, cfg));

  Rng rng(31);
  std::normal_distribution<double> g(0.0, 1.0);
  std::uniform_int_distribution<int> act(0, 2);
  std::vector<Sample> samples;
  for (int i = 0; i < 300; ++i) {
    const State s{g(rng), g(rng), g(rng)};
    samples.emplace_back(QueryPoint{s, {g(rng)}}, act(rng), s);
  }
  const Dataset d(std::move(samples));
  EXPECT_FALSE(flag_unknown(d[5].u, d[5].action_id, d, cfg));

  for (std::size_t min_count : {1u, 3u, 6u}) {
    cfg.min_count = min_count;
    for (int q = 0; q < 30; ++q) {
      const QueryPoint u{{g(rng), g(rng), g(rng)}, {g(rng)}};
      for (int a = 0; a < 3; ++a) {
        std::size_t count = 0;
        for (const auto& s : d.samples())
          if (s.action_id == a && standardized_distance(u, s.u, d.scaler()) <= cfg.radius) ++count;
        EXPECT_EQ(flag_unknown(u, a, d, cfg), count < min_count);
      }
    }
  }
}

TEST(SupportingSetGrid, LayoutAndNearest) {
  const auto sup = SupportingSet::grid(0.0, 2.0, 0.0, 1.0, 1.0, 4, pose_kernel());
  EXPECT_EQ(sup.size(), 3u * 2u * 4u);
  for (std::size_t i = 0; i < sup.size(); ++i) EXPECT_EQ(sup.nearest(sup[i]), i);
  const std::size_t n = sup.nearest({1.9, 0.1, 3.1});
  EXPECT_NEAR(sup[n].x, 2.0, 1e-12);
  EXPECT_NEAR(sup[n].y, 0.0, 1e-12);
  EXPECT_NEAR(std::abs(sup[n].theta), M_PI, 1e-12);
}

TEST(PolicyCsv, RoundTrip) {
  const auto sup = random_supports(5, 40);
  Policy p{{1, 0, 2, 2, 1}};
  ValueField v;
  v.values = Eigen::VectorXd::LinSpaced(5, 0.0, 1.0);
  v.weights = sup.gram().solve(v.values);
  std::stringstream ss;
  write_policy_csv(ss, sup, p, v);
  const auto rec = read_policy_csv(ss);
  EXPECT_EQ(rec.policy, p);
  EXPECT_EQ(rec.values, v.values);
  ASSERT_EQ(rec.states.size(), 5u);
  EXPECT_EQ(rec.states[3], sup[3]);
}

}  // namespace
}  // namespace causalnav
