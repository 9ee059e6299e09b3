#pragma once

#include <cstddef>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "causalnav/core.hpp"

namespace causalnav {

/// The k nearest samples to a query under the dataset's standardized distance.
struct Neighborhood {
  Eigen::VectorXd query;              // standardized query vector
  std::vector<std::size_t> members;  // sample indices, nearest first

  std::size_t size() const { return members.size(); }
};

/// Exactly min(k, n) nearest samples; ties go to the lower sample index.
Neighborhood select_neighborhood(const QueryPoint& u, const Dataset& dataset, std::size_t k);

/// Which coordinates of u the propensity KDE compares.
enum class KdeScope { full, context_only };

/// Per-action probabilities, ordered like the action-id list they were built for.
class PropensityVector {
 public:
  PropensityVector() = default;
  explicit PropensityVector(std::vector<double> p) : p_(std::move(p)) {}

  std::size_t size() const { return p_.size(); }
  double operator[](std::size_t i) const { return p_[i]; }
  const std::vector<double>& values() const { return p_; }

 private:
  std::vector<double> p_;
};

/// Raises every entry to at least `floor` and rescales the rest so the vector
/// sums to one. Requires floor * size < 1.
PropensityVector clip_propensities(std::vector<double> p, double floor);

/// Nonparametric propensity at u: p(a) p(u|a) / sum_b p(b) p(u|b) with p(a) the
/// action frequency in the neighborhood and p(u|a) a Gaussian KDE of bandwidth h
/// over the standardized coordinates. Absent actions get `floor` before
/// renormalization.
PropensityVector estimate_propensity(const QueryPoint& u, const Neighborhood& nbhd,
                                     const Dataset& dataset, std::span<const int> action_ids,
                                     double h, double floor, KdeScope scope = KdeScope::full);

/// Propensity vectors at every member u_i of the neighborhood, each estimated
/// with the neighborhood as the reference population.
std::vector<PropensityVector> member_propensities(const Neighborhood& nbhd, const Dataset& dataset,
                                                  std::span<const int> action_ids, double h,
                                                  double floor, KdeScope scope = KdeScope::full);

/// Local regression values at each neighborhood member (one entry per member).
struct RegressionFit {
  std::vector<Vec3> mu;
  std::vector<Mat3> sigma;
};

/// Inverse-propensity weighted first moment. `propensity` holds e_a(u_i) for each
/// member. Empty optional when no member took the action.
std::optional<Vec3> ipw_mu(int action_id, const Neighborhood& nbhd, const Dataset& dataset,
                           std::span<const double> propensity);
std::optional<Mat3> ipw_sigma(int action_id, const Neighborhood& nbhd, const Dataset& dataset,
                              std::span<const double> propensity);

/// Local-constant KNN regression: mean shift of the action's members.
std::optional<Vec3> knn_mu(int action_id, const Neighborhood& nbhd, const Dataset& dataset);
/// Regression second moment: mean of f f' + e e' over the action's members.
std::optional<Mat3> reg_sigma(int action_id, const Neighborhood& nbhd, const Dataset& dataset);
/// The KNN fit evaluated at every member (constant within the neighborhood).
std::optional<RegressionFit> knn_regression_fit(int action_id, const Neighborhood& nbhd,
                                                const Dataset& dataset);

/// Doubly robust first moment combining IPW with a regression fit. Without a fit
/// and without action members there is no information and the result is empty.
std::optional<Vec3> dr_mu(int action_id, const Neighborhood& nbhd, const Dataset& dataset,
                          std::span<const double> propensity,
                          const std::optional<RegressionFit>& fit);
std::optional<Mat3> dr_sigma(int action_id, const Neighborhood& nbhd, const Dataset& dataset,
                             std::span<const double> propensity,
                             const std::optional<RegressionFit>& fit);

/// Symmetrizes and clamps eigenvalues to at least `floor`.
Eigen::MatrixXd psd_project(const Eigen::MatrixXd& m, double floor);

enum class EstimatorKind { regression, ipw, dr };

std::string to_string(EstimatorKind kind);
EstimatorKind parse_estimator(const std::string& name);

struct EstimatorConfig {
  std::size_t k_neighbors = 50;
  double bandwidth = 0.5;
  double propensity_floor = 0.05;
  double sigma_floor = 1e-6;
  KdeScope kde_scope = KdeScope::full;
  unsigned threads = 0;  // 0: hardware concurrency

  void validate(std::size_t action_count) const;
};

struct MomentPair {
  Vec3 mu = Vec3::Zero();
  Mat3 sigma = Mat3::Zero();
  std::size_t support_count = 0;
  bool unknown = false;
};

/// Moments for every (supporting point, action) cell.
class MomentTable {
 public:
  MomentTable() = default;
  MomentTable(std::size_t supports, std::vector<int> action_ids, EstimatorKind kind);

  std::size_t supports() const { return supports_; }
  const std::vector<int>& action_ids() const { return action_ids_; }
  std::size_t action_count() const { return action_ids_.size(); }
  EstimatorKind kind() const { return kind_; }

  /// Column index of an action id; throws std::out_of_range when absent.
  std::size_t action_index(int action_id) const;

  MomentPair& at(std::size_t support, std::size_t action_index);
  const MomentPair& at(std::size_t support, std::size_t action_index) const;

  std::size_t fallback_cells() const;

  void write_csv(std::ostream& os) const;
  static MomentTable read_csv(std::istream& is);

 private:
  std::size_t supports_ = 0;
  std::vector<int> action_ids_;
  EstimatorKind kind_ = EstimatorKind::regression;
  std::vector<MomentPair> cells_;
};

/// Estimates every cell: neighborhood, propensities (ipw/dr), moments, PSD
/// repair. Cells without action support retry with a doubled neighborhood, then
/// fall back to mu = 0, sigma = floor * I and are flagged unknown.
MomentTable build_moment_table(std::span<const QueryPoint> supports,
                               std::span<const int> action_ids, const Dataset& dataset,
                               EstimatorKind kind, const EstimatorConfig& cfg);

}  // namespace causalnav
