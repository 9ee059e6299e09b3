#pragma once

#include <cstdint>

#include "causalnav/core.hpp"

namespace causalnav {

/// Two-action generator with a scalar confounder c ~ U(-1, 1). Action 1 is taken
/// with probability logistic(slope c + offset); its outcome is
/// base + gain c + N(0, noise), action 0 gets the mirrored outcome. The outcome is
/// stored in the x component of the shift; pose is fixed at the origin so only c
/// separates samples.
struct ConfoundedGenerator {
  double slope = 2.0;
  double offset = 1.0;
  double base = 4.0;
  double gain = 4.0;
  double noise = 1.0;

  double propensity(int action, double c) const;
  double mean_outcome(int action, double c) const;

  /// Randomized variant: every action with probability 1/2 regardless of c.
  Dataset sample(std::size_t n, std::uint64_t seed, bool randomized = false) const;
};

}  // namespace causalnav
