#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include <Eigen/Core>

namespace causalnav {

/// Pose dimension (x, y, theta).
inline constexpr int kStateDim = 3;
/// Index of the heading coordinate in pose vectors.
inline constexpr int kHeadingIndex = 2;

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

/// Wraps an angle into (-pi, pi]. Throws std::domain_error on non-finite input.
double wrap_angle(double a);

/// Wraps `d` into (-period/2, period/2].
double wrap_period(double d, double period);

/// Planar pose. The heading is wrapped on construction.
struct State {
  double x = 0.0;
  double y = 0.0;
  double theta = 0.0;

  State() = default;
  State(double x_, double y_, double theta_);

  Vec3 as_vector() const { return {x, y, theta}; }
  static State from_vector(const Vec3& v) { return {v[0], v[1], v[2]}; }

  friend bool operator==(const State&, const State&) = default;
};

/// Difference between two poses with the angular part on the shortest signed path.
struct StateShift {
  double dx = 0.0;
  double dy = 0.0;
  double dtheta = 0.0;

  Vec3 as_vector() const { return {dx, dy, dtheta}; }
};

StateShift state_shift(const State& s, const State& s_next);

/// Inverse of state_shift for |dtheta| < pi.
State advance(const State& s, const StateShift& d);

struct Action {
  int id = 0;
  double v = 0.0;      // m/s
  double omega = 0.0;  // rad/s
};

using ContextFeature = std::vector<double>;

/// The pair u = (s, c). Flattened as [x, y, theta, c...].
struct QueryPoint {
  State state;
  ContextFeature feature;

  std::size_t dim() const { return kStateDim + feature.size(); }
  Eigen::VectorXd as_vector() const;
};

struct Sample {
  QueryPoint u;
  int action_id = 0;
  State next_state;
  StateShift delta;

  Sample(QueryPoint u_, int action_id_, State next);
};

/// Per-dimension z-scoring of flattened query points. The heading coordinate is
/// compared through its wrapped difference, so only its scale matters.
class FeatureScaler {
 public:
  FeatureScaler() = default;
  FeatureScaler(Eigen::VectorXd mean, Eigen::VectorXd scale);

  /// Fits mean and standard deviation over the rows of `points`. Dimensions with
  /// zero variance get scale 1.
  static FeatureScaler fit(std::span<const Eigen::VectorXd> points);

  std::size_t dim() const { return static_cast<std::size_t>(mean_.size()); }
  const Eigen::VectorXd& mean() const { return mean_; }
  const Eigen::VectorXd& scale() const { return scale_; }

  Eigen::VectorXd standardize(const Eigen::VectorXd& raw) const;
  Eigen::VectorXd standardize(const QueryPoint& u) const { return standardize(u.as_vector()); }

  /// Squared distance between two already-standardized vectors.
  double squared_distance(const Eigen::Ref<const Eigen::VectorXd>& za,
                          const Eigen::Ref<const Eigen::VectorXd>& zb) const;

 private:
  Eigen::VectorXd mean_;
  Eigen::VectorXd scale_;
  double heading_period_ = 0.0;  // 2*pi / scale of the heading dimension
};

double standardized_distance(const QueryPoint& u1, const QueryPoint& u2,
                             const FeatureScaler& scaler);

/// Ordered transition log with its fitted scaler and cached standardized rows.
class Dataset {
 public:
  Dataset() = default;
  explicit Dataset(std::vector<Sample> samples);

  std::size_t size() const { return samples_.size(); }
  bool empty() const { return samples_.empty(); }
  const Sample& operator[](std::size_t i) const { return samples_[i]; }
  const std::vector<Sample>& samples() const { return samples_; }
  const FeatureScaler& scaler() const { return scaler_; }
  std::size_t feature_dim() const { return feature_dim_; }

  /// Standardized row of sample i (column-major matrix: one column per sample).
  auto standardized(std::size_t i) const { return z_.col(static_cast<Eigen::Index>(i)); }
  const Eigen::MatrixXd& standardized_matrix() const { return z_; }

 private:
  std::vector<Sample> samples_;
  FeatureScaler scaler_;
  Eigen::MatrixXd z_;
  std::size_t feature_dim_ = 0;
};

}  // namespace causalnav
