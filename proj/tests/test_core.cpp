#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

#include <gtest/gtest.h>

#include "causalnav/core.hpp"
#include "causalnav/io.hpp"
#include "causalnav/rng.hpp"

namespace causalnav {
namespace {

constexpr double kPi = std::numbers::pi;

TEST(WrapAngle, Examples) {
  EXPECT_EQ(wrap_angle(0.0), 0.0);
  EXPECT_NEAR(wrap_angle(kPi - 0.1 + 0.2), -kPi + 0.1, 1e-12);
  EXPECT_NEAR(wrap_angle(-3.0 * kPi), kPi, 1e-12);
  EXPECT_NEAR(wrap_angle(kPi), kPi, 0.0);
  EXPECT_NEAR(wrap_angle(-kPi), kPi, 0.0);
}

TEST(WrapAngle, IdempotentAndInRange) {
  Rng rng(11);
  std::uniform_real_distribution<double> d(-100.0, 100.0);
  for (int i = 0; i < 1000; ++i) {
    const double a = wrap_angle(d(rng));
    EXPECT_GT(a, -kPi);
    EXPECT_LE(a, kPi);
    EXPECT_EQ(wrap_angle(a), a);
  }
}

TEST(WrapAngle, RejectsNonFinite) {
  EXPECT_THROW(wrap_angle(std::nan("")), std::domain_error);
  EXPECT_THROW(wrap_angle(INFINITY), std::domain_error);
}

TEST(StateShift, Examples) {
  auto d = state_shift({0, 0, 0}, {1, 2, 0});
  EXPECT_EQ(d.dx, 1.0);
  EXPECT_EQ(d.dy, 2.0);
  EXPECT_EQ(d.dtheta, 0.0);

  d = state_shift({0, 0, kPi - 0.1}, {0, 0, -kPi + 0.1});
  EXPECT_NEAR(d.dtheta, 0.2, 1e-12);

  const State s{3.0, -1.0, 0.7};
  d = state_shift(s, s);
  EXPECT_EQ(d.as_vector(), Vec3::Zero());
}

TEST(StateShift, AdvanceRoundTrip) {
  Rng rng(5);
  std::uniform_real_distribution<double> pos(-10.0, 10.0);
  std::uniform_real_distribution<double> ang(-3.1, 3.1);
  for (int i = 0; i < 500; ++i) {
    const State s{pos(rng), pos(rng), ang(rng)};
    const StateShift d{pos(rng), pos(rng), ang(rng)};
    const StateShift back = state_shift(s, advance(s, d));
    EXPECT_NEAR(back.dx, d.dx, 1e-12);
    EXPECT_NEAR(back.dy, d.dy, 1e-12);
    EXPECT_NEAR(back.dtheta, d.dtheta, 1e-12);
  }
}

TEST(StandardizedDistance, Examples) {
  const QueryPoint u{{1.0, 2.0, 0.5}, {0.3}};
  const FeatureScaler unit(Eigen::VectorXd::Zero(4), Eigen::VectorXd::Ones(4));
  EXPECT_EQ(standardized_distance(u, u, unit), 0.0);

  // scale 2 on the first coordinate, values 0 and 4
  Eigen::VectorXd scale = Eigen::VectorXd::Ones(3);
  scale[0] = 2.0;
  const FeatureScaler s(Eigen::VectorXd::Zero(3), scale);
  EXPECT_NEAR(standardized_distance({{0, 0, 0}, {}}, {{4, 0, 0}, {}}, s), 2.0, 1e-15);
}

TEST(StandardizedDistance, HeadingUsesWrappedDifference) {
  Eigen::VectorXd scale = Eigen::VectorXd::Ones(3);
  scale[2] = 0.5;
  const FeatureScaler s(Eigen::VectorXd::Zero(3), scale);
  const double d = standardized_distance({{0, 0, kPi - 0.05}, {}}, {{0, 0, -kPi + 0.05}, {}}, s);
  EXPECT_NEAR(d, 0.1 / 0.5, 1e-12);
}

TEST(StandardizedDistance, SymmetricAndTriangle) {
  Rng rng(3);
  std::normal_distribution<double> n(0.0, 2.0);
  Eigen::VectorXd scale(5);
  scale << 1.5, 0.7, 0.9, 0.2, 3.0;
  const FeatureScaler s(Eigen::VectorXd::Zero(5), scale);
  auto draw = [&] { return QueryPoint{{n(rng), n(rng), n(rng)}, {n(rng), n(rng)}}; };
  for (int i = 0; i < 300; ++i) {
    const auto a = draw(), b = draw(), c = draw();
    EXPECT_DOUBLE_EQ(standardized_distance(a, b, s), standardized_distance(b, a, s));
    EXPECT_LE(standardized_distance(a, c, s),
              standardized_distance(a, b, s) + standardized_distance(b, c, s) + 1e-12);
  }
}

TEST(FeatureScaler, FitZScores) {
  std::vector<Eigen::VectorXd> pts;
  for (double v : {1.0, 3.0}) {
    Eigen::VectorXd p(4);
    p << v, 2.0 * v, 0.0, 5.0;
    pts.push_back(p);
  }
  const auto s = FeatureScaler::fit(pts);
  EXPECT_DOUBLE_EQ(s.mean()[0], 2.0);
  EXPECT_DOUBLE_EQ(s.scale()[0], 1.0);
  EXPECT_DOUBLE_EQ(s.scale()[1], 2.0);
  // constant dimensions keep unit scale
  EXPECT_DOUBLE_EQ(s.scale()[2], 1.0);
  EXPECT_DOUBLE_EQ(s.scale()[3], 1.0);
}

TEST(Dataset, CachesStandardizedRows) {
  std::vector<Sample> samples;
  samples.emplace_back(QueryPoint{{0, 0, 0}, {1.0}}, 0, State{1, 0, 0});
  samples.emplace_back(QueryPoint{{2, 0, 0}, {3.0}}, 1, State{2, 1, 0.1});
  const Dataset d(std::move(samples));
  ASSERT_EQ(d.size(), 2u);
  EXPECT_EQ(d.feature_dim(), 1u);
  EXPECT_NEAR(d.standardized(0)[0], -1.0, 1e-12);
  EXPECT_NEAR(d.standardized(1)[3], 1.0, 1e-12);
  EXPECT_NEAR(d[1].delta.dtheta, 0.1, 1e-15);
}

TEST(Io, DoubleRoundTrip) {
  Rng rng(9);
  std::normal_distribution<double> n(0.0, 1e3);
  for (int i = 0; i < 200; ++i) {
    const double v = n(rng);
    EXPECT_EQ(io::parse_double(io::format_double(v)), v);
  }
  EXPECT_EQ(io::format_double(-0.0), "0");
  EXPECT_THROW(io::parse_double("1.0x"), std::invalid_argument);
  EXPECT_THROW(io::parse_int("3.5"), std::invalid_argument);
}

TEST(Io, HeaderCheck) {
  std::istringstream ok("a,b,c\n");
  EXPECT_NO_THROW(io::expect_header(ok, {"a", "b", "c"}, "test"));
  std::istringstream bad("a,c\n");
  EXPECT_THROW(io::expect_header(bad, {"a", "b", "c"}, "test"), std::runtime_error);
}

TEST(Seeds, DeriveIsDeterministicAndPathSensitive) {
  EXPECT_EQ(derive_seed(1, {2, 3}), derive_seed(1, {2, 3}));
  EXPECT_NE(derive_seed(1, {2, 3}), derive_seed(1, {3, 2}));
  EXPECT_NE(derive_seed(1, {2}), derive_seed(2, {2}));
}

}  // namespace
}  // namespace causalnav
