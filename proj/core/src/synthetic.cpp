#include "causalnav/synthetic.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

#include "causalnav/rng.hpp"

namespace causalnav {

double ConfoundedGenerator::propensity(int action, double c) const {
  const double p1 = 1.0 / (1.0 + std::exp(-(slope * c + offset)));
  if (action == 1) return p1;
  if (action == 0) return 1.0 - p1;
  throw std::invalid_argument("ConfoundedGenerator: action must be 0 or 1");
}

double ConfoundedGenerator::mean_outcome(int action, double c) const {
  if (action == 1) return base + gain * c;
  if (action == 0) return -base - gain * c;
  throw std::invalid_argument("ConfoundedGenerator: action must be 0 or 1");
}

Dataset ConfoundedGenerator::sample(std::size_t n, std::uint64_t seed, bool randomized) const {
  Rng rng(derive_seed(seed, {0x5EED}));
  std::uniform_real_distribution<double> unif(-1.0, 1.0);
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  std::normal_distribution<double> eps(0.0, noise);
  std::vector<Sample> samples;
  samples.reserve(n);
  const State origin{0.0, 0.0, 0.0};
  for (std::size_t i = 0; i < n; ++i) {
    const double c = unif(rng);
    const double p1 = randomized ? 0.5 : propensity(1, c);
    const int a = coin(rng) < p1 ? 1 : 0;
    const double y = mean_outcome(a, c) + eps(rng);
    samples.emplace_back(QueryPoint{origin, {c}}, a, State{y, 0.0, 0.0});
  }
  return Dataset(std::move(samples));
}

}  // namespace causalnav
