#include "causalnav/estimators.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <numeric>
#include <ostream>
#include <stdexcept>

#include <Eigen/Eigenvalues>

#include "causalnav/io.hpp"
#include "causalnav/parallel.hpp"

namespace causalnav {

namespace {

double kde_squared_distance(const FeatureScaler& scaler, const Eigen::Ref<const Eigen::VectorXd>& za,
                            const Eigen::Ref<const Eigen::VectorXd>& zb, KdeScope scope) {
  if (scope == KdeScope::full) return scaler.squared_distance(za, zb);
  const Eigen::Index n = za.size() - kStateDim;
  return (za.tail(n) - zb.tail(n)).squaredNorm();
}

// Unnormalized KDE mass per action at standardized point z over the neighborhood.
std::vector<double> action_kde_mass(const Eigen::Ref<const Eigen::VectorXd>& z, const Neighborhood& nbhd,
                                    const Dataset& dataset, std::span<const int> action_ids,
                                    double h, KdeScope scope, std::vector<std::size_t>& counts) {
  std::vector<double> mass(action_ids.size(), 0.0);
  counts.assign(action_ids.size(), 0);
  const double inv_two_h2 = 0.5 / (h * h);
  for (std::size_t j : nbhd.members) {
    const int a = dataset[j].action_id;
    const auto it = std::find(action_ids.begin(), action_ids.end(), a);
    if (it == action_ids.end()) continue;
    const auto idx = static_cast<std::size_t>(it - action_ids.begin());
    const double d2 = kde_squared_distance(dataset.scaler(), z, dataset.standardized(j), scope);
    mass[idx] += std::exp(-d2 * inv_two_h2);
    ++counts[idx];
  }
  return mass;
}

PropensityVector propensity_from_mass(std::vector<double> mass, const std::vector<std::size_t>& counts,
                                      double floor) {
  const double total_mass = std::accumulate(mass.begin(), mass.end(), 0.0);
  const double total_count = static_cast<double>(std::accumulate(counts.begin(), counts.end(), std::size_t{0}));
  std::vector<double> p(mass.size(), 0.0);
  if (total_mass > 0.0) {
    for (std::size_t a = 0; a < p.size(); ++a) p[a] = mass[a] / total_mass;
  } else if (total_count > 0.0) {
    // every kernel weight underflowed; fall back to the action frequencies
    for (std::size_t a = 0; a < p.size(); ++a) p[a] = static_cast<double>(counts[a]) / total_count;
  }
  for (std::size_t a = 0; a < p.size(); ++a) {
    if (counts[a] == 0) p[a] = floor;
  }
  return clip_propensities(std::move(p), floor);
}

void check_propensity_span(const Neighborhood& nbhd, std::span<const double> propensity) {
  if (propensity.size() != nbhd.size())
    throw std::invalid_argument("estimator: one propensity per neighborhood member required");
}

void check_fit(const Neighborhood& nbhd, const RegressionFit& fit) {
  if (fit.mu.size() != nbhd.size() || fit.sigma.size() != nbhd.size())
    throw std::invalid_argument("estimator: regression fit must cover every neighborhood member");
}

double checked_weight(double e) {
  if (!(e > 0.0)) throw std::invalid_argument("estimator: propensities must be positive");
  return 1.0 / e;
}

std::size_t count_action(int action_id, const Neighborhood& nbhd, const Dataset& dataset) {
  return static_cast<std::size_t>(std::count_if(nbhd.members.begin(), nbhd.members.end(),
                                                [&](std::size_t i) { return dataset[i].action_id == action_id; }));
}

}  // namespace

Neighborhood select_neighborhood(const QueryPoint& u, const Dataset& dataset, std::size_t k) {
  if (dataset.empty()) throw std::invalid_argument("select_neighborhood: empty dataset");
  if (k == 0) throw std::invalid_argument("select_neighborhood: k must be at least 1");
  Neighborhood nbhd;
  nbhd.query = dataset.scaler().standardize(u);
  const std::size_t n = dataset.size();
  std::vector<std::pair<double, std::size_t>> dist(n);
  for (std::size_t i = 0; i < n; ++i)
    dist[i] = {dataset.scaler().squared_distance(nbhd.query, dataset.standardized(i)), i};
  const std::size_t take = std::min(k, n);
  std::partial_sort(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(take), dist.end());
  nbhd.members.reserve(take);
  for (std::size_t i = 0; i < take; ++i) nbhd.members.push_back(dist[i].second);
  return nbhd;
}

PropensityVector clip_propensities(std::vector<double> p, double floor) {
  const std::size_t m = p.size();
  if (m == 0) throw std::invalid_argument("propensity: empty vector");
  if (!(floor >= 0.0) || floor * static_cast<double>(m) >= 1.0)
    throw std::invalid_argument("propensity: floor times action count must be below one");
  double total = 0.0;
  for (double v : p) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw std::invalid_argument("propensity: invalid entry");
    total += v;
  }
  if (total <= 0.0) {
    std::fill(p.begin(), p.end(), 1.0 / static_cast<double>(m));
    return PropensityVector(std::move(p));
  }
  for (double& v : p) v /= total;

  std::vector<bool> clipped(m, false);
  for (;;) {
    std::size_t n_clipped = 0;
    double free_mass = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      if (clipped[i]) {
        ++n_clipped;
      } else {
        free_mass += p[i];
      }
    }
    const double target = 1.0 - static_cast<double>(n_clipped) * floor;
    bool changed = false;
    for (std::size_t i = 0; i < m; ++i) {
      if (clipped[i]) {
        p[i] = floor;
      } else {
        p[i] = free_mass > 0.0 ? p[i] * target / free_mass
                               : target / static_cast<double>(m - n_clipped);
        if (p[i] < floor) {
          clipped[i] = true;
          changed = true;
        }
      }
    }
    if (!changed) break;
  }
  return PropensityVector(std::move(p));
}

PropensityVector estimate_propensity(const QueryPoint& u, const Neighborhood& nbhd,
                                     const Dataset& dataset, std::span<const int> action_ids,
                                     double h, double floor, KdeScope scope) {
  if (!(h > 0.0)) throw std::invalid_argument("estimate_propensity: bandwidth must be positive");
  if (nbhd.members.empty()) throw std::invalid_argument("estimate_propensity: empty neighborhood");
  const Eigen::VectorXd z = dataset.scaler().standardize(u);
  std::vector<std::size_t> counts;
  auto mass = action_kde_mass(z, nbhd, dataset, action_ids, h, scope, counts);
  return propensity_from_mass(std::move(mass), counts, floor);
}

std::vector<PropensityVector> member_propensities(const Neighborhood& nbhd, const Dataset& dataset,
                                                  std::span<const int> action_ids, double h,
                                                  double floor, KdeScope scope) {
  if (!(h > 0.0)) throw std::invalid_argument("member_propensities: bandwidth must be positive");
  if (nbhd.members.empty()) throw std::invalid_argument("member_propensities: empty neighborhood");
  const std::size_t k = nbhd.size();
  // action index per member, then the symmetric pairwise kernel accumulated once
  std::vector<std::ptrdiff_t> idx(k, -1);
  std::vector<std::size_t> counts(action_ids.size(), 0);
  for (std::size_t m = 0; m < k; ++m) {
    const auto it = std::find(action_ids.begin(), action_ids.end(), dataset[nbhd.members[m]].action_id);
    if (it == action_ids.end()) continue;
    idx[m] = it - action_ids.begin();
    ++counts[static_cast<std::size_t>(idx[m])];
  }
  const double inv_two_h2 = 0.5 / (h * h);
  std::vector<std::vector<double>> mass(k, std::vector<double>(action_ids.size(), 0.0));
  for (std::size_t m = 0; m < k; ++m) {
    const auto zm = dataset.standardized(nbhd.members[m]);
    if (idx[m] >= 0) mass[m][static_cast<std::size_t>(idx[m])] += 1.0;
    for (std::size_t j = m + 1; j < k; ++j) {
      if (idx[m] < 0 && idx[j] < 0) continue;
      const double d2 = kde_squared_distance(dataset.scaler(), zm, dataset.standardized(nbhd.members[j]), scope);
      const double w = std::exp(-d2 * inv_two_h2);
      if (idx[j] >= 0) mass[m][static_cast<std::size_t>(idx[j])] += w;
      if (idx[m] >= 0) mass[j][static_cast<std::size_t>(idx[m])] += w;
    }
  }
  std::vector<PropensityVector> out;
  out.reserve(k);
  for (std::size_t m = 0; m < k; ++m) out.push_back(propensity_from_mass(std::move(mass[m]), counts, floor));
  return out;
}

std::optional<Vec3> ipw_mu(int action_id, const Neighborhood& nbhd, const Dataset& dataset,
                           std::span<const double> propensity) {
  check_propensity_span(nbhd, propensity);
  Vec3 acc = Vec3::Zero();
  bool any = false;
  for (std::size_t m = 0; m < nbhd.size(); ++m) {
    const Sample& s = dataset[nbhd.members[m]];
    if (s.action_id != action_id) continue;
    acc += s.delta.as_vector() * checked_weight(propensity[m]);
    any = true;
  }
  if (!any) return std::nullopt;
  return acc / static_cast<double>(nbhd.size());
}

std::optional<Mat3> ipw_sigma(int action_id, const Neighborhood& nbhd, const Dataset& dataset,
                              std::span<const double> propensity) {
  check_propensity_span(nbhd, propensity);
  Mat3 acc = Mat3::Zero();
  bool any = false;
  for (std::size_t m = 0; m < nbhd.size(); ++m) {
    const Sample& s = dataset[nbhd.members[m]];
    if (s.action_id != action_id) continue;
    const Vec3 d = s.delta.as_vector();
    acc += (d * d.transpose()) * checked_weight(propensity[m]);
    any = true;
  }
  if (!any) return std::nullopt;
  return acc / static_cast<double>(nbhd.size());
}

std::optional<Vec3> knn_mu(int action_id, const Neighborhood& nbhd, const Dataset& dataset) {
  Vec3 acc = Vec3::Zero();
  std::size_t n = 0;
  for (std::size_t i : nbhd.members) {
    if (dataset[i].action_id != action_id) continue;
    acc += dataset[i].delta.as_vector();
    ++n;
  }
  if (n == 0) return std::nullopt;
  return acc / static_cast<double>(n);
}

std::optional<Mat3> reg_sigma(int action_id, const Neighborhood& nbhd, const Dataset& dataset) {
  const auto f = knn_mu(action_id, nbhd, dataset);
  if (!f) return std::nullopt;
  Mat3 acc = Mat3::Zero();
  std::size_t n = 0;
  for (std::size_t i : nbhd.members) {
    if (dataset[i].action_id != action_id) continue;
    const Vec3 resid = dataset[i].delta.as_vector() - *f;
    acc += (*f) * f->transpose() + resid * resid.transpose();
    ++n;
  }
  return acc / static_cast<double>(n);
}

std::optional<RegressionFit> knn_regression_fit(int action_id, const Neighborhood& nbhd,
                                                const Dataset& dataset) {
  const auto mu = knn_mu(action_id, nbhd, dataset);
  if (!mu) return std::nullopt;
  const auto sigma = reg_sigma(action_id, nbhd, dataset);
  RegressionFit fit;
  fit.mu.assign(nbhd.size(), *mu);
  fit.sigma.assign(nbhd.size(), *sigma);
  return fit;
}

std::optional<Vec3> dr_mu(int action_id, const Neighborhood& nbhd, const Dataset& dataset,
                          std::span<const double> propensity,
                          const std::optional<RegressionFit>& fit) {
  check_propensity_span(nbhd, propensity);
  if (!fit) {
    if (count_action(action_id, nbhd, dataset) == 0) return std::nullopt;
    throw std::invalid_argument("dr_mu: action support present but no regression fit supplied");
  }
  check_fit(nbhd, *fit);
  Vec3 acc = Vec3::Zero();
  for (std::size_t m = 0; m < nbhd.size(); ++m) {
    const Sample& s = dataset[nbhd.members[m]];
    const double w = checked_weight(propensity[m]);
    const double indicator = s.action_id == action_id ? 1.0 : 0.0;
    acc += indicator * w * s.delta.as_vector() + (1.0 - indicator * w) * fit->mu[m];
  }
  return acc / static_cast<double>(nbhd.size());
}

std::optional<Mat3> dr_sigma(int action_id, const Neighborhood& nbhd, const Dataset& dataset,
                             std::span<const double> propensity,
                             const std::optional<RegressionFit>& fit) {
  check_propensity_span(nbhd, propensity);
  if (!fit) {
    if (count_action(action_id, nbhd, dataset) == 0) return std::nullopt;
    throw std::invalid_argument("dr_sigma: action support present but no regression fit supplied");
  }
  check_fit(nbhd, *fit);
  Mat3 acc = Mat3::Zero();
  for (std::size_t m = 0; m < nbhd.size(); ++m) {
    const Sample& s = dataset[nbhd.members[m]];
    const double w = checked_weight(propensity[m]);
    const double indicator = s.action_id == action_id ? 1.0 : 0.0;
    const Vec3 d = s.delta.as_vector();
    acc += indicator * w * (d * d.transpose()) + (1.0 - indicator * w) * fit->sigma[m];
  }
  return acc / static_cast<double>(nbhd.size());
}

Eigen::MatrixXd psd_project(const Eigen::MatrixXd& m, double floor) {
  if (m.rows() != m.cols()) throw std::invalid_argument("psd_project: matrix must be square");
  const Eigen::MatrixXd sym = 0.5 * (m + m.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(sym);
  if (eig.info() != Eigen::Success) throw std::runtime_error("psd_project: eigendecomposition failed");
  const Eigen::VectorXd clamped = eig.eigenvalues().cwiseMax(floor);
  Eigen::MatrixXd out = eig.eigenvectors() * clamped.asDiagonal() * eig.eigenvectors().transpose();
  return 0.5 * (out + out.transpose());
}

std::string to_string(EstimatorKind kind) {
  switch (kind) {
    case EstimatorKind::regression: return "regression";
    case EstimatorKind::ipw: return "ipw";
    case EstimatorKind::dr: return "dr";
  }
  return "unknown";
}

EstimatorKind parse_estimator(const std::string& name) {
  if (name == "regression") return EstimatorKind::regression;
  if (name == "ipw") return EstimatorKind::ipw;
  if (name == "dr") return EstimatorKind::dr;
  throw std::invalid_argument("unknown estimator '" + name + "' (expected regression|ipw|dr)");
}

void EstimatorConfig::validate(std::size_t action_count) const {
  if (k_neighbors < 1) throw std::invalid_argument("estimator: k_neighbors must be at least 1");
  if (!(bandwidth > 0.0)) throw std::invalid_argument("estimator: bandwidth must be positive");
  if (!(propensity_floor > 0.0) || propensity_floor * static_cast<double>(action_count) >= 1.0)
    throw std::invalid_argument("estimator: propensity_floor must be in (0, 1/|actions|)");
  if (!(sigma_floor > 0.0)) throw std::invalid_argument("estimator: sigma_floor must be positive");
}

MomentTable::MomentTable(std::size_t supports, std::vector<int> action_ids, EstimatorKind kind)
    : supports_(supports), action_ids_(std::move(action_ids)), kind_(kind),
      cells_(supports * action_ids_.size()) {
  std::vector<int> sorted = action_ids_;
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
    throw std::invalid_argument("moment table: duplicate action ids");
}

std::size_t MomentTable::action_index(int action_id) const {
  const auto it = std::find(action_ids_.begin(), action_ids_.end(), action_id);
  if (it == action_ids_.end()) throw std::out_of_range("moment table: unknown action id " + std::to_string(action_id));
  return static_cast<std::size_t>(it - action_ids_.begin());
}

MomentPair& MomentTable::at(std::size_t support, std::size_t action_index) {
  if (support >= supports_ || action_index >= action_ids_.size())
    throw std::out_of_range("moment table: cell out of range");
  return cells_[support * action_ids_.size() + action_index];
}

const MomentPair& MomentTable::at(std::size_t support, std::size_t action_index) const {
  if (support >= supports_ || action_index >= action_ids_.size())
    throw std::out_of_range("moment table: cell out of range");
  return cells_[support * action_ids_.size() + action_index];
}

std::size_t MomentTable::fallback_cells() const {
  return static_cast<std::size_t>(std::count_if(cells_.begin(), cells_.end(), [](const MomentPair& c) { return c.unknown; }));
}

namespace {
std::vector<std::string> moment_columns() {
  std::vector<std::string> cols{"support_index", "action_id", "mu_0", "mu_1", "mu_2"};
  for (int r = 0; r < kStateDim; ++r)
    for (int c = 0; c < kStateDim; ++c) cols.push_back("sigma_" + std::to_string(r) + std::to_string(c));
  cols.insert(cols.end(), {"support_count", "unknown_flag", "estimator_tag"});
  return cols;
}
}  // namespace

void MomentTable::write_csv(std::ostream& os) const {
  io::write_header(os, moment_columns());
  const std::string tag = to_string(kind_);
  for (std::size_t i = 0; i < supports_; ++i) {
    for (std::size_t a = 0; a < action_ids_.size(); ++a) {
      const MomentPair& c = at(i, a);
      os << i << ',' << action_ids_[a];
      for (int d = 0; d < kStateDim; ++d) os << ',' << io::format_double(c.mu[d]);
      for (int r = 0; r < kStateDim; ++r)
        for (int col = 0; col < kStateDim; ++col) os << ',' << io::format_double(c.sigma(r, col));
      os << ',' << c.support_count << ',' << (c.unknown ? 1 : 0) << ',' << tag << '\n';
    }
  }
}

MomentTable MomentTable::read_csv(std::istream& is) {
  const auto cols = moment_columns();
  io::expect_header(is, cols, "moment table");
  struct Row {
    std::size_t support;
    int action;
    MomentPair cell;
  };
  std::vector<Row> rows;
  std::string line;
  std::string tag;
  while (io::next_line(is, line)) {
    const auto f = io::split_csv(line);
    if (f.size() != cols.size()) throw std::runtime_error("moment table: malformed row");
    Row r{};
    r.support = static_cast<std::size_t>(io::parse_int(f[0]));
    r.action = static_cast<int>(io::parse_int(f[1]));
    for (int d = 0; d < kStateDim; ++d) r.cell.mu[d] = io::parse_double(f[2 + d]);
    for (int k = 0; k < kStateDim * kStateDim; ++k)
      r.cell.sigma(k / kStateDim, k % kStateDim) = io::parse_double(f[5 + k]);
    r.cell.support_count = static_cast<std::size_t>(io::parse_int(f[14]));
    r.cell.unknown = io::parse_int(f[15]) != 0;
    if (tag.empty()) tag = std::string(f[16]);
    else if (tag != f[16]) throw std::runtime_error("moment table: mixed estimator tags");
    rows.push_back(r);
  }
  if (rows.empty()) throw std::runtime_error("moment table: no rows");
  std::vector<int> actions;
  std::size_t supports = 0;
  for (const auto& r : rows) {
    if (std::find(actions.begin(), actions.end(), r.action) == actions.end()) actions.push_back(r.action);
    supports = std::max(supports, r.support + 1);
  }
  MomentTable table(supports, actions, parse_estimator(tag));
  if (rows.size() != supports * actions.size()) throw std::runtime_error("moment table: incomplete table");
  for (const auto& r : rows) table.at(r.support, table.action_index(r.action)) = r.cell;
  return table;
}

namespace {

struct LocalEstimate {
  Neighborhood nbhd;
  std::vector<std::vector<double>> propensity_by_action;  // [action][member]
};

LocalEstimate prepare(const QueryPoint& u, const Dataset& dataset, std::size_t k,
                      std::span<const int> action_ids, EstimatorKind kind, const EstimatorConfig& cfg) {
  LocalEstimate est;
  est.nbhd = select_neighborhood(u, dataset, k);
  if (kind != EstimatorKind::regression) {
    const auto props = member_propensities(est.nbhd, dataset, action_ids, cfg.bandwidth,
                                           cfg.propensity_floor, cfg.kde_scope);
    est.propensity_by_action.assign(action_ids.size(), std::vector<double>(est.nbhd.size()));
    for (std::size_t m = 0; m < props.size(); ++m)
      for (std::size_t a = 0; a < action_ids.size(); ++a) est.propensity_by_action[a][m] = props[m][a];
  }
  return est;
}

MomentPair estimate_cell(int action_id, std::size_t action_idx, const LocalEstimate& est,
                         const Dataset& dataset, EstimatorKind kind) {
  MomentPair cell;
  cell.support_count = count_action(action_id, est.nbhd, dataset);
  switch (kind) {
    case EstimatorKind::regression:
      cell.mu = *knn_mu(action_id, est.nbhd, dataset);
      cell.sigma = *reg_sigma(action_id, est.nbhd, dataset);
      break;
    case EstimatorKind::ipw: {
      const auto& e = est.propensity_by_action[action_idx];
      cell.mu = *ipw_mu(action_id, est.nbhd, dataset, e);
      cell.sigma = *ipw_sigma(action_id, est.nbhd, dataset, e);
      break;
    }
    case EstimatorKind::dr: {
      const auto& e = est.propensity_by_action[action_idx];
      const auto fit = knn_regression_fit(action_id, est.nbhd, dataset);
      cell.mu = *dr_mu(action_id, est.nbhd, dataset, e, fit);
      cell.sigma = *dr_sigma(action_id, est.nbhd, dataset, e, fit);
      break;
    }
  }
  return cell;
}

}  // namespace

MomentTable build_moment_table(std::span<const QueryPoint> supports,
                               std::span<const int> action_ids, const Dataset& dataset,
                               EstimatorKind kind, const EstimatorConfig& cfg) {
  if (dataset.empty()) throw std::invalid_argument("build_moment_table: empty dataset");
  cfg.validate(action_ids.size());
  MomentTable table(supports.size(), std::vector<int>(action_ids.begin(), action_ids.end()), kind);

  parallel_for(supports.size(), cfg.threads, [&](std::size_t i) {
    const LocalEstimate base = prepare(supports[i], dataset, cfg.k_neighbors, action_ids, kind, cfg);
    std::optional<LocalEstimate> wide;
    for (std::size_t a = 0; a < action_ids.size(); ++a) {
      const int action = action_ids[a];
      const LocalEstimate* est = &base;
      if (count_action(action, base.nbhd, dataset) == 0) {
        if (!wide && dataset.size() > base.nbhd.size())
          wide = prepare(supports[i], dataset, 2 * cfg.k_neighbors, action_ids, kind, cfg);
        est = wide ? &*wide : nullptr;
        if (est && count_action(action, est->nbhd, dataset) == 0) est = nullptr;
      }
      MomentPair cell;
      if (est == nullptr) {
        cell.sigma = Mat3::Identity() * cfg.sigma_floor;
        cell.unknown = true;
      } else {
        cell = estimate_cell(action, a, *est, dataset, kind);
        cell.sigma = psd_project(cell.sigma, cfg.sigma_floor);
      }
      table.at(i, a) = cell;
    }
  });
  return table;
}

}  // namespace causalnav
