#pragma once

#include <cstddef>
#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "causalnav/core.hpp"
#include "causalnav/estimators.hpp"
#include "causalnav/kernel.hpp"

namespace causalnav {

/// Supporting states for the value representation together with their Gram system.
class SupportingSet {
 public:
  SupportingSet(std::vector<State> states, const KernelConfig& cfg);

  /// Uniform grid over [x_min, x_max] x [y_min, y_max] with the given spacing and
  /// `headings` equispaced headings.
  static SupportingSet grid(double x_min, double x_max, double y_min, double y_max,
                            double spacing, int headings, const KernelConfig& cfg);

  std::size_t size() const { return states_.size(); }
  const std::vector<State>& states() const { return states_; }
  const State& operator[](std::size_t i) const { return states_[i]; }
  const GramSystem& gram() const { return gram_; }

  /// Support closest to s in lengthscale-scaled coordinates (heading wrapped).
  std::size_t nearest(const State& s) const;

 private:
  struct GridSpec {
    double x0, y0, spacing;
    int nx, ny, headings;
  };

  std::vector<State> states_;
  GramSystem gram_;
  std::optional<GridSpec> grid_;
};

/// Action id per supporting state.
struct Policy {
  std::vector<int> action_ids;

  std::size_t size() const { return action_ids.size(); }
  friend bool operator==(const Policy&, const Policy&) = default;
};

struct ValueField {
  Eigen::VectorXd values;   // V at the supports
  Eigen::VectorXd weights;  // (lambda I + K)^{-1} V
};

struct PessimismConfig {
  double radius = 0.5;        // standardized units
  std::size_t min_count = 3;
  double penalty = 2.0;       // reward units

  void validate() const;
};

/// Per-cell unknown flags, laid out like a MomentTable (support-major).
struct UnknownMask {
  std::size_t action_count = 0;
  std::vector<bool> flags;

  bool operator()(std::size_t support, std::size_t action_index) const {
    return flags[support * action_count + action_index];
  }
};

Eigen::MatrixXd assemble_generator(const SupportingSet& supports, const Policy& policy,
                                   const MomentTable& table, double gamma);

/// Solves (M (lambda I + K)^{-1} - (1 - gamma) I) V = -R. `rewards` holds
/// R(s_i, pi(s_i)). Throws SingularSystemError when the system cannot be solved
/// to a residual of 1e-8 * (1 + |R|_inf).
ValueField evaluate_policy(const Eigen::MatrixXd& generator, const GramSystem& gram, double gamma,
                           const Eigen::VectorXd& rewards, double* residual = nullptr);

double interpolate_value(const State& s, const ValueField& value, const GramSystem& gram);

struct ValueDerivatives {
  Eigen::VectorXd gradient;
  Eigen::MatrixXd hessian;
};

ValueDerivatives value_derivatives(const State& s, const ValueField& value, const GramSystem& gram);

/// Reward R(s_i, a) for every support (rows) and action (columns, table order).
using RewardMatrix = Eigen::MatrixXd;

/// Pessimistic planning: unknown cells have their reward reduced by `penalty`
/// and are never chosen where a known action exists.
struct Pessimism {
  UnknownMask mask;
  double penalty = 0.0;
};

/// Applies the pessimism penalty to a reward matrix.
RewardMatrix penalized_rewards(const RewardMatrix& rewards, const Pessimism* pessimism);

/// Per-support argmax of R(s, a) + gamma (mu . grad v + 0.5 tr(sigma H v));
/// ties go to the lowest action id.
Policy improve_policy(const ValueField& value, const SupportingSet& supports,
                      const MomentTable& table, const RewardMatrix& rewards, double gamma,
                      const Pessimism* pessimism = nullptr);

struct PolicyIterationDiagnostics {
  std::vector<std::size_t> policy_changes;  // per iteration
  std::vector<double> residuals;            // linear-system residual per evaluation
  std::vector<double> mean_values;
  std::size_t iterations = 0;
  bool converged = false;
};

struct PolicyIterationResult {
  Policy policy;
  ValueField value;
  PolicyIterationDiagnostics diagnostics;
};

/// Alternates evaluation and improvement from the reward-greedy policy until the
/// policy repeats or `max_iters` is hit. Without convergence the iterate with the
/// highest mean value is returned.
PolicyIterationResult policy_iteration(const SupportingSet& supports, const MomentTable& table,
                                       const RewardMatrix& rewards, double gamma, int max_iters,
                                       const Pessimism* pessimism = nullptr);

/// True iff fewer than `min_count` samples with this action lie in the
/// standardized radius-ball around u.
bool flag_unknown(const QueryPoint& u, int action_id, const Dataset& dataset,
                  const PessimismConfig& cfg);

/// Flags for every cell: ball-count detector or the table's own fallback flag.
UnknownMask build_unknown_mask(std::span<const QueryPoint> queries, const MomentTable& table,
                               const Dataset& dataset, const PessimismConfig& cfg);

void write_policy_csv(std::ostream& os, const SupportingSet& supports, const Policy& policy,
                      const ValueField& value);

struct PolicyRecord {
  std::vector<State> states;
  Policy policy;
  Eigen::VectorXd values;
};
PolicyRecord read_policy_csv(std::istream& is);

}  // namespace causalnav
