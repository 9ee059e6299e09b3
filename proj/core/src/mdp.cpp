#include "causalnav/mdp.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <numbers>
#include <ostream>
#include <set>
#include <stdexcept>

#include <Eigen/LU>

#include "causalnav/io.hpp"

namespace causalnav {

namespace {

Eigen::MatrixXd states_matrix(const std::vector<State>& states) {
  Eigen::MatrixXd m(kStateDim, static_cast<Eigen::Index>(states.size()));
  for (std::size_t i = 0; i < states.size(); ++i) m.col(static_cast<Eigen::Index>(i)) = states[i].as_vector();
  return m;
}

}  // namespace

SupportingSet::SupportingSet(std::vector<State> states, const KernelConfig& cfg)
    : states_(std::move(states)), gram_(states_matrix(states_), cfg) {
  if (cfg.dim() != kStateDim) throw std::invalid_argument("supporting set: kernel must be over poses");
}

SupportingSet SupportingSet::grid(double x_min, double x_max, double y_min, double y_max,
                                  double spacing, int headings, const KernelConfig& cfg) {
  if (!(spacing > 0.0) || headings < 1 || !(x_max >= x_min) || !(y_max >= y_min))
    throw std::invalid_argument("supporting grid: invalid bounds, spacing, or heading count");
  const int nx = static_cast<int>(std::floor((x_max - x_min) / spacing + 1e-9)) + 1;
  const int ny = static_cast<int>(std::floor((y_max - y_min) / spacing + 1e-9)) + 1;
  // center the lattice inside the box
  const double x0 = x_min + 0.5 * ((x_max - x_min) - (nx - 1) * spacing);
  const double y0 = y_min + 0.5 * ((y_max - y_min) - (ny - 1) * spacing);
  std::vector<State> states;
  states.reserve(static_cast<std::size_t>(nx * ny * headings));
  for (int ix = 0; ix < nx; ++ix)
    for (int iy = 0; iy < ny; ++iy)
      for (int h = 0; h < headings; ++h)
        states.emplace_back(x0 + ix * spacing, y0 + iy * spacing,
                            -std::numbers::pi + (h + 1) * 2.0 * std::numbers::pi / headings);
  SupportingSet set(std::move(states), cfg);
  set.grid_ = GridSpec{x0, y0, spacing, nx, ny, headings};
  return set;
}

std::size_t SupportingSet::nearest(const State& s) const {
  const Eigen::VectorXd& ls = gram_.config().lengthscales();
  if (grid_) {
    // separable distance on a product lattice: round each coordinate independently
    const GridSpec& g = *grid_;
    const int ix = std::clamp(static_cast<int>(std::lround((s.x - g.x0) / g.spacing)), 0, g.nx - 1);
    const int iy = std::clamp(static_cast<int>(std::lround((s.y - g.y0) / g.spacing)), 0, g.ny - 1);
    const double step = 2.0 * std::numbers::pi / g.headings;
    long ih = std::lround((s.theta + std::numbers::pi) / step) - 1;
    ih = ((ih % g.headings) + g.headings) % g.headings;
    return static_cast<std::size_t>((ix * g.ny + iy) * g.headings + ih);
  }
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < states_.size(); ++i) {
    const double dx = (s.x - states_[i].x) / ls[0];
    const double dy = (s.y - states_[i].y) / ls[1];
    const double dt = wrap_angle(s.theta - states_[i].theta) / ls[2];
    const double d = dx * dx + dy * dy + dt * dt;
    if (d < best_d) {
      best_d = d;
      best = i;
    }
  }
  return best;
}

void PessimismConfig::validate() const {
  if (!(radius > 0.0)) throw std::invalid_argument("pessimism: radius must be positive");
  if (min_count < 1) throw std::invalid_argument("pessimism: min_count must be at least 1");
  if (!(penalty >= 0.0)) throw std::invalid_argument("pessimism: penalty must be nonnegative");
}

Eigen::MatrixXd assemble_generator(const SupportingSet& supports, const Policy& policy,
                                   const MomentTable& table, double gamma) {
  const std::size_t n = supports.size();
  if (policy.size() != n) throw std::invalid_argument("assemble_generator: policy size mismatch");
  if (table.supports() != n) throw std::invalid_argument("assemble_generator: moment table does not cover the supports");
  const GramSystem& gram = supports.gram();
  Eigen::MatrixXd m(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    const MomentPair& cell = table.at(i, table.action_index(policy.action_ids[i]));
    m.row(static_cast<Eigen::Index>(i)) =
        generator_row(cell.mu, cell.sigma, gram.supports().col(static_cast<Eigen::Index>(i)),
                      gram.supports(), gram.config(), gamma);
  }
  return m;
}

ValueField evaluate_policy(const Eigen::MatrixXd& generator, const GramSystem& gram, double gamma,
                           const Eigen::VectorXd& rewards, double* residual) {
  const Eigen::Index n = gram.size();
  if (!(gamma > 0.0 && gamma < 1.0)) throw std::invalid_argument("evaluate_policy: gamma must be in (0, 1)");
  if (generator.rows() != n || generator.cols() != n || rewards.size() != n)
    throw std::invalid_argument("evaluate_policy: dimension mismatch");

  // With w = (lambda I + K)^{-1} V the system becomes (M - (1 - gamma)(lambda I + K)) w = -R.
  Eigen::MatrixXd lhs = -(1.0 - gamma) * gram.gram();
  lhs.diagonal().array() -= (1.0 - gamma) * gram.config().regularization();
  lhs += generator;
  const Eigen::VectorXd rhs = -rewards;
  Eigen::PartialPivLU<Eigen::MatrixXd> lu(lhs);
  const double rcond = lu.rcond();
  if (!(rcond > std::numeric_limits<double>::epsilon()))
    throw SingularSystemError("evaluate_policy: singular system", rcond);

  ValueField field;
  field.weights = lu.solve(rhs);
  // V = (lambda I + K) w, so (lambda I + K)^{-1} V is w itself and the residual of
  // the original system is M w - (1 - gamma) V + R.
  auto finish = [&](ValueField& f) {
    f.values = gram.gram() * f.weights + gram.config().regularization() * f.weights;
    return (generator * f.weights - (1.0 - gamma) * f.values - rhs).lpNorm<Eigen::Infinity>();
  };
  double res = finish(field);
  const double tol = 1e-8 * (1.0 + rewards.lpNorm<Eigen::Infinity>());
  for (int refine = 0; refine < 2 && !(res <= tol); ++refine) {
    field.weights += lu.solve(rhs - lhs * field.weights);
    res = finish(field);
  }
  if (!(res <= tol) || !field.values.allFinite())
    throw SingularSystemError("evaluate_policy: residual " + io::format_double(res) +
                                  " above tolerance (rcond " + io::format_double(rcond) + ")",
                              rcond);
  if (residual) *residual = res;
  return field;
}

double interpolate_value(const State& s, const ValueField& value, const GramSystem& gram) {
  if (value.weights.size() != gram.size()) throw std::invalid_argument("interpolate_value: value field does not match gram");
  return gram.kernel_column(s.as_vector()).dot(value.weights);
}

ValueDerivatives value_derivatives(const State& s, const ValueField& value, const GramSystem& gram) {
  if (value.weights.size() != gram.size()) throw std::invalid_argument("value_derivatives: value field does not match gram");
  const KernelConfig& cfg = gram.config();
  const Eigen::Index k = cfg.dim();
  const Eigen::VectorXd inv_sq = cfg.lengthscales().cwiseAbs2().cwiseInverse();
  const Eigen::VectorXd x = s.as_vector();
  ValueDerivatives out{Eigen::VectorXd::Zero(k), Eigen::MatrixXd::Zero(k, k)};
  double weighted_k = 0.0;
  Eigen::VectorXd z(k);
  for (Eigen::Index j = 0; j < gram.size(); ++j) {
    double quad = 0.0;
    for (Eigen::Index d = 0; d < k; ++d) {
      double diff = x[d] - gram.supports()(d, j);
      if (cfg.is_angular(d)) diff = wrap_angle(diff);
      z[d] = diff * inv_sq[d];
      quad += diff * z[d];
    }
    const double wk = value.weights[j] * std::exp(-0.5 * quad);
    out.gradient.noalias() -= wk * z;
    out.hessian.noalias() += wk * (z * z.transpose());
    weighted_k += wk;
  }
  out.hessian.diagonal() -= weighted_k * inv_sq;
  return out;
}

RewardMatrix penalized_rewards(const RewardMatrix& rewards, const Pessimism* pessimism) {
  if (!pessimism) return rewards;
  RewardMatrix out = rewards;
  for (Eigen::Index i = 0; i < out.rows(); ++i)
    for (Eigen::Index a = 0; a < out.cols(); ++a)
      if (pessimism->mask(static_cast<std::size_t>(i), static_cast<std::size_t>(a))) out(i, a) -= pessimism->penalty;
  return out;
}

namespace {

void check_inputs(const SupportingSet& supports, const MomentTable& table, const RewardMatrix& rewards,
                  const Pessimism* pessimism) {
  if (table.supports() != supports.size())
    throw std::invalid_argument("planner: moment table does not cover the supports");
  if (rewards.rows() != static_cast<Eigen::Index>(supports.size()) ||
      rewards.cols() != static_cast<Eigen::Index>(table.action_count()))
    throw std::invalid_argument("planner: reward matrix shape mismatch");
  if (pessimism && (pessimism->mask.action_count != table.action_count() ||
                    pessimism->mask.flags.size() != supports.size() * table.action_count()))
    throw std::invalid_argument("planner: unknown mask shape mismatch");
}

std::vector<std::size_t> actions_by_id(const MomentTable& table) {
  std::vector<std::size_t> order(table.action_count());
  for (std::size_t a = 0; a < order.size(); ++a) order[a] = a;
  std::sort(order.begin(), order.end(),
            [&](std::size_t l, std::size_t r) { return table.action_ids()[l] < table.action_ids()[r]; });
  return order;
}

Policy improve_with(const std::vector<ValueDerivatives>& derivs, const MomentTable& table,
                    const RewardMatrix& rewards, double gamma, const Pessimism* pessimism) {
  const std::size_t n = table.supports();
  const auto order = actions_by_id(table);
  Policy policy;
  policy.action_ids.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    bool any_known = false;
    if (pessimism) {
      for (std::size_t a = 0; a < table.action_count() && !any_known; ++a) any_known = !pessimism->mask(i, a);
    }
    double best = -std::numeric_limits<double>::infinity();
    std::size_t best_a = order.front();
    bool found = false;
    for (std::size_t a : order) {
      if (pessimism && any_known && pessimism->mask(i, a)) continue;
      const MomentPair& cell = table.at(i, a);
      double score = rewards(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(a));
      if (!derivs.empty()) {
        const auto& d = derivs[i];
        score += gamma * (cell.mu.dot(d.gradient) + 0.5 * (cell.sigma.cwiseProduct(d.hessian)).sum());
      }
      if (!found || score > best) {
        best = score;
        best_a = a;
        found = true;
      }
    }
    policy.action_ids[i] = table.action_ids()[best_a];
  }
  return policy;
}

std::vector<ValueDerivatives> derivatives_at_supports(const SupportingSet& supports, const ValueField& value) {
  std::vector<ValueDerivatives> out;
  out.reserve(supports.size());
  for (std::size_t i = 0; i < supports.size(); ++i) out.push_back(value_derivatives(supports[i], value, supports.gram()));
  return out;
}

}  // namespace

Policy improve_policy(const ValueField& value, const SupportingSet& supports,
                      const MomentTable& table, const RewardMatrix& rewards, double gamma,
                      const Pessimism* pessimism) {
  check_inputs(supports, table, rewards, pessimism);
  const RewardMatrix r = penalized_rewards(rewards, pessimism);
  return improve_with(derivatives_at_supports(supports, value), table, r, gamma, pessimism);
}

PolicyIterationResult policy_iteration(const SupportingSet& supports, const MomentTable& table,
                                       const RewardMatrix& rewards, double gamma, int max_iters,
                                       const Pessimism* pessimism) {
  if (max_iters < 1) throw std::invalid_argument("policy_iteration: max_iters must be at least 1");
  check_inputs(supports, table, rewards, pessimism);
  const RewardMatrix r = penalized_rewards(rewards, pessimism);
  const std::size_t n = supports.size();

  PolicyIterationResult result;
  Policy policy = improve_with({}, table, r, gamma, pessimism);
  std::set<std::vector<int>> seen{policy.action_ids};
  std::optional<PolicyIterationResult> best;
  double best_mean = -std::numeric_limits<double>::infinity();

  for (int it = 0; it < max_iters; ++it) {
    Eigen::VectorXd rpi(static_cast<Eigen::Index>(n));
    for (std::size_t i = 0; i < n; ++i)
      rpi[static_cast<Eigen::Index>(i)] =
          r(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(table.action_index(policy.action_ids[i])));
    const Eigen::MatrixXd m = assemble_generator(supports, policy, table, gamma);
    double residual = 0.0;
    ValueField value = evaluate_policy(m, supports.gram(), gamma, rpi, &residual);
    result.diagnostics.residuals.push_back(residual);
    const double mean_value = value.values.mean();
    result.diagnostics.mean_values.push_back(mean_value);
    result.diagnostics.iterations = static_cast<std::size_t>(it + 1);

    if (mean_value > best_mean) {
      best_mean = mean_value;
      best = PolicyIterationResult{policy, value, {}};
    }

    Policy next = improve_with(derivatives_at_supports(supports, value), table, r, gamma, pessimism);
    std::size_t changes = 0;
    for (std::size_t i = 0; i < n; ++i) changes += next.action_ids[i] != policy.action_ids[i];
    result.diagnostics.policy_changes.push_back(changes);
    if (changes == 0) {
      result.policy = std::move(policy);
      result.value = std::move(value);
      result.diagnostics.converged = true;
      return result;
    }
    if (!seen.insert(next.action_ids).second) break;  // cycle
    policy = std::move(next);
  }
  result.policy = std::move(best->policy);
  result.value = std::move(best->value);
  return result;
}

bool flag_unknown(const QueryPoint& u, int action_id, const Dataset& dataset, const PessimismConfig& cfg) {
  cfg.validate();
  if (dataset.empty()) return true;
  const Eigen::VectorXd z = dataset.scaler().standardize(u);
  const double r2 = cfg.radius * cfg.radius;
  std::size_t count = 0;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    if (dataset[i].action_id != action_id) continue;
    if (dataset.scaler().squared_distance(z, dataset.standardized(i)) <= r2 && ++count >= cfg.min_count) return false;
  }
  return true;
}

UnknownMask build_unknown_mask(std::span<const QueryPoint> queries, const MomentTable& table,
                               const Dataset& dataset, const PessimismConfig& cfg) {
  cfg.validate();
  if (queries.size() != table.supports()) throw std::invalid_argument("unknown mask: query count mismatch");
  UnknownMask mask{table.action_count(), std::vector<bool>(table.supports() * table.action_count(), true)};
  const double r2 = cfg.radius * cfg.radius;
  std::vector<std::size_t> counts(table.action_count());
  for (std::size_t i = 0; i < queries.size(); ++i) {
    std::fill(counts.begin(), counts.end(), 0);
    if (!dataset.empty()) {
      const Eigen::VectorXd z = dataset.scaler().standardize(queries[i]);
      for (std::size_t s = 0; s < dataset.size(); ++s) {
        if (dataset.scaler().squared_distance(z, dataset.standardized(s)) > r2) continue;
        const auto& ids = table.action_ids();
        const auto it = std::find(ids.begin(), ids.end(), dataset[s].action_id);
        if (it != ids.end()) ++counts[static_cast<std::size_t>(it - ids.begin())];
      }
    }
    for (std::size_t a = 0; a < table.action_count(); ++a)
      mask.flags[i * table.action_count() + a] = table.at(i, a).unknown || counts[a] < cfg.min_count;
  }
  return mask;
}

void write_policy_csv(std::ostream& os, const SupportingSet& supports, const Policy& policy,
                      const ValueField& value) {
  if (policy.size() != supports.size() || value.values.size() != static_cast<Eigen::Index>(supports.size()))
    throw std::invalid_argument("write_policy_csv: size mismatch");
  io::write_header(os, {"support_index", "x", "y", "theta", "action_id", "value"});
  for (std::size_t i = 0; i < supports.size(); ++i) {
    const State& s = supports[i];
    os << i << ',' << io::format_double(s.x) << ',' << io::format_double(s.y) << ','
       << io::format_double(s.theta) << ',' << policy.action_ids[i] << ','
       << io::format_double(value.values[static_cast<Eigen::Index>(i)]) << '\n';
  }
}

PolicyRecord read_policy_csv(std::istream& is) {
  io::expect_header(is, {"support_index", "x", "y", "theta", "action_id", "value"}, "policy");
  PolicyRecord rec;
  std::vector<double> values;
  std::string line;
  while (io::next_line(is, line)) {
    const auto f = io::split_csv(line);
    if (f.size() != 6) throw std::runtime_error("policy: malformed row");
    if (static_cast<std::size_t>(io::parse_int(f[0])) != rec.states.size())
      throw std::runtime_error("policy: support indices must be consecutive");
    rec.states.emplace_back(io::parse_double(f[1]), io::parse_double(f[2]), io::parse_double(f[3]));
    rec.policy.action_ids.push_back(static_cast<int>(io::parse_int(f[4])));
    values.push_back(io::parse_double(f[5]));
  }
  rec.values = Eigen::Map<Eigen::VectorXd>(values.data(), static_cast<Eigen::Index>(values.size()));
  return rec;
}

}  // namespace causalnav
