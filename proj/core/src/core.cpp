#include "causalnav/core.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace causalnav {

double wrap_period(double d, double period) {
  if (!std::isfinite(d)) throw std::domain_error("wrap: non-finite value");
  double r = std::remainder(d, period);
  if (r <= -0.5 * period) r += period;
  return r;
}

double wrap_angle(double a) { return wrap_period(a, 2.0 * std::numbers::pi); }

State::State(double x_, double y_, double theta_) : x(x_), y(y_), theta(wrap_angle(theta_)) {}

StateShift state_shift(const State& s, const State& s_next) {
  return {s_next.x - s.x, s_next.y - s.y, wrap_angle(s_next.theta - s.theta)};
}

State advance(const State& s, const StateShift& d) {
  return {s.x + d.dx, s.y + d.dy, s.theta + d.dtheta};
}

Eigen::VectorXd QueryPoint::as_vector() const {
  Eigen::VectorXd v(static_cast<Eigen::Index>(dim()));
  v[0] = state.x;
  v[1] = state.y;
  v[2] = state.theta;
  for (std::size_t i = 0; i < feature.size(); ++i) v[kStateDim + static_cast<Eigen::Index>(i)] = feature[i];
  return v;
}

Sample::Sample(QueryPoint u_, int action_id_, State next)
    : u(std::move(u_)), action_id(action_id_), next_state(next), delta(state_shift(u.state, next)) {}

FeatureScaler::FeatureScaler(Eigen::VectorXd mean, Eigen::VectorXd scale)
    : mean_(std::move(mean)), scale_(std::move(scale)) {
  if (mean_.size() != scale_.size()) throw std::invalid_argument("scaler: mean/scale size mismatch");
  if (mean_.size() < kStateDim) throw std::invalid_argument("scaler: fewer dimensions than a pose");
  for (Eigen::Index d = 0; d < scale_.size(); ++d) {
    if (!(scale_[d] > 0.0) || !std::isfinite(scale_[d]))
      throw std::invalid_argument("scaler: scale entries must be positive and finite");
  }
  heading_period_ = 2.0 * std::numbers::pi / scale_[kHeadingIndex];
}

FeatureScaler FeatureScaler::fit(std::span<const Eigen::VectorXd> points) {
  if (points.empty()) throw std::invalid_argument("scaler: no points to fit");
  const Eigen::Index dim = points.front().size();
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(dim);
  for (const auto& p : points) {
    if (p.size() != dim) throw std::invalid_argument("scaler: inconsistent dimensionality");
    mean += p;
  }
  mean /= static_cast<double>(points.size());
  Eigen::VectorXd var = Eigen::VectorXd::Zero(dim);
  for (const auto& p : points) var += (p - mean).cwiseAbs2();
  var /= static_cast<double>(points.size());
  Eigen::VectorXd scale(dim);
  for (Eigen::Index d = 0; d < dim; ++d) {
    const double sd = std::sqrt(var[d]);
    scale[d] = (sd > 1e-12) ? sd : 1.0;
  }
  return {std::move(mean), std::move(scale)};
}

Eigen::VectorXd FeatureScaler::standardize(const Eigen::VectorXd& raw) const {
  if (raw.size() != mean_.size()) throw std::invalid_argument("scaler: dimension mismatch");
  return (raw - mean_).cwiseQuotient(scale_);
}

double FeatureScaler::squared_distance(const Eigen::Ref<const Eigen::VectorXd>& za,
                                       const Eigen::Ref<const Eigen::VectorXd>& zb) const {
  double acc = 0.0;
  for (Eigen::Index d = 0; d < za.size(); ++d) {
    double diff = za[d] - zb[d];
    if (d == kHeadingIndex) {
      diff = std::remainder(diff, heading_period_);
    }
    acc += diff * diff;
  }
  return acc;
}

double standardized_distance(const QueryPoint& u1, const QueryPoint& u2,
                             const FeatureScaler& scaler) {
  if (u1.dim() != u2.dim() || u1.dim() != scaler.dim())
    throw std::invalid_argument("standardized_distance: dimension mismatch");
  return std::sqrt(scaler.squared_distance(scaler.standardize(u1), scaler.standardize(u2)));
}

Dataset::Dataset(std::vector<Sample> samples) : samples_(std::move(samples)) {
  if (samples_.empty()) return;
  feature_dim_ = samples_.front().u.feature.size();
  std::vector<Eigen::VectorXd> rows;
  rows.reserve(samples_.size());
  for (const auto& s : samples_) {
    if (s.u.feature.size() != feature_dim_)
      throw std::invalid_argument("dataset: inconsistent feature dimensionality");
    rows.push_back(s.u.as_vector());
  }
  scaler_ = FeatureScaler::fit(rows);
  z_.resize(static_cast<Eigen::Index>(kStateDim + feature_dim_), static_cast<Eigen::Index>(samples_.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) z_.col(static_cast<Eigen::Index>(i)) = scaler_.standardize(rows[i]);
}

}  // namespace causalnav
