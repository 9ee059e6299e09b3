#include "causalnav/kernel.hpp"

#include <cmath>

#include "causalnav/core.hpp"

namespace causalnav {

KernelConfig::KernelConfig(Eigen::VectorXd lengthscales, double regularization,
                           std::vector<int> angular_dims)
    : lengthscales_(std::move(lengthscales)), regularization_(regularization) {
  if (lengthscales_.size() == 0) throw std::invalid_argument("kernel: empty lengthscales");
  for (Eigen::Index d = 0; d < lengthscales_.size(); ++d) {
    if (!(lengthscales_[d] > 0.0) || !std::isfinite(lengthscales_[d]))
      throw std::invalid_argument("kernel: lengthscales must be positive");
  }
  if (!(regularization_ >= 0.0) || !std::isfinite(regularization_))
    throw std::invalid_argument("kernel: regularization must be nonnegative");
  inv_sq_ = lengthscales_.cwiseAbs2().cwiseInverse();
  angular_.assign(static_cast<std::size_t>(lengthscales_.size()), false);
  for (int d : angular_dims) {
    if (d < 0 || d >= lengthscales_.size()) throw std::invalid_argument("kernel: angular dim out of range");
    angular_[static_cast<std::size_t>(d)] = true;
  }
}

KernelConfig KernelConfig::pose(double lengthscale_xy, double lengthscale_theta,
                                double regularization) {
  return {Eigen::Vector3d(lengthscale_xy, lengthscale_xy, lengthscale_theta), regularization,
          {kHeadingIndex}};
}

KernelConfig KernelConfig::pose_default() { return pose(1.0, 0.8, 1e-3); }

Eigen::VectorXd KernelConfig::difference(const Eigen::Ref<const Eigen::VectorXd>& x,
                                         const Eigen::Ref<const Eigen::VectorXd>& y) const {
  if (x.size() != dim() || y.size() != dim()) throw std::invalid_argument("kernel: dimension mismatch");
  Eigen::VectorXd d = x - y;
  for (Eigen::Index i = 0; i < d.size(); ++i) {
    if (angular_[static_cast<std::size_t>(i)]) d[i] = wrap_angle(d[i]);
  }
  return d;
}

double kernel_eval(const Eigen::Ref<const Eigen::VectorXd>& x,
                   const Eigen::Ref<const Eigen::VectorXd>& y, const KernelConfig& cfg) {
  const Eigen::VectorXd d = cfg.difference(x, y).cwiseQuotient(cfg.lengthscales());
  return std::exp(-0.5 * d.squaredNorm());
}

Eigen::VectorXd kernel_grad(const Eigen::Ref<const Eigen::VectorXd>& x,
                            const Eigen::Ref<const Eigen::VectorXd>& y, const KernelConfig& cfg) {
  const Eigen::VectorXd d = cfg.difference(x, y);
  const Eigen::VectorXd z = d.cwiseQuotient(cfg.lengthscales().cwiseAbs2());
  const double k = std::exp(-0.5 * d.dot(z));
  return -k * z;
}

Eigen::MatrixXd kernel_hessian(const Eigen::Ref<const Eigen::VectorXd>& x,
                               const Eigen::Ref<const Eigen::VectorXd>& y,
                               const KernelConfig& cfg) {
  const Eigen::VectorXd d = cfg.difference(x, y);
  const Eigen::VectorXd inv_sq = cfg.lengthscales().cwiseAbs2().cwiseInverse();
  const Eigen::VectorXd z = d.cwiseProduct(inv_sq);
  const double k = std::exp(-0.5 * d.dot(z));
  Eigen::MatrixXd h = z * z.transpose();
  h.diagonal() -= inv_sq;
  return k * h;
}

GramSystem::GramSystem(Eigen::MatrixXd supports, KernelConfig cfg)
    : supports_(std::move(supports)), cfg_(std::move(cfg)) {
  const Eigen::Index n = supports_.cols();
  if (n < 1) throw std::invalid_argument("gram: need at least one supporting point");
  if (supports_.rows() != cfg_.dim()) throw std::invalid_argument("gram: dimension mismatch");
  k_.resize(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    k_(i, i) = 1.0;
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const double v = kernel_eval(supports_.col(i), supports_.col(j), cfg_);
      k_(i, j) = v;
      k_(j, i) = v;
    }
  }
  Eigen::MatrixXd a = k_;
  a.diagonal().array() += cfg_.regularization();
  llt_.compute(a);
  if (llt_.info() != Eigen::Success)
    throw SingularSystemError("gram: (lambda I + K) is not positive definite", 0.0);
  rcond_ = llt_.rcond();
  if (!(rcond_ > 1e-15))
    throw SingularSystemError("gram: (lambda I + K) is numerically singular", rcond_);
}

Eigen::MatrixXd GramSystem::solve(const Eigen::Ref<const Eigen::MatrixXd>& b) const {
  if (b.rows() != size()) throw std::invalid_argument("gram: right-hand side size mismatch");
  return llt_.solve(b);
}

Eigen::VectorXd GramSystem::kernel_column(const Eigen::Ref<const Eigen::VectorXd>& x) const {
  Eigen::VectorXd col(size());
  for (Eigen::Index j = 0; j < size(); ++j) col[j] = kernel_eval(x, supports_.col(j), cfg_);
  return col;
}

GramSystem build_gram(const Eigen::MatrixXd& supports, const KernelConfig& cfg) {
  return {supports, cfg};
}

Eigen::RowVectorXd generator_row(const Eigen::Ref<const Eigen::VectorXd>& mu,
                                 const Eigen::Ref<const Eigen::MatrixXd>& sigma,
                                 const Eigen::Ref<const Eigen::VectorXd>& s_i,
                                 const Eigen::Ref<const Eigen::MatrixXd>& supports,
                                 const KernelConfig& cfg, double gamma) {
  const Eigen::Index k = cfg.dim();
  if (mu.size() != k || sigma.rows() != k || sigma.cols() != k || s_i.size() != k ||
      supports.rows() != k)
    throw std::invalid_argument("generator_row: dimension mismatch");
  if ((sigma - sigma.transpose()).cwiseAbs().maxCoeff() > 1e-8)
    throw std::invalid_argument("generator_row: sigma is not symmetric");

  // Entry j = gamma * k * (-mu.z + 0.5 * (z' sigma z - sum_d sigma_dd / l_d^2)),
  // with z = wrapped(s_i - s_j) / l^2.
  const Eigen::VectorXd& inv_sq = cfg.inv_sq_;
  const double trace_term = sigma.diagonal().dot(inv_sq);
  Eigen::RowVectorXd row(supports.cols());
  Eigen::VectorXd z(k);
  for (Eigen::Index j = 0; j < supports.cols(); ++j) {
    double quad = 0.0;
    for (Eigen::Index d = 0; d < k; ++d) {
      double diff = s_i[d] - supports(d, j);
      if (cfg.angular_[static_cast<std::size_t>(d)]) diff = wrap_angle(diff);
      z[d] = diff * inv_sq[d];
      quad += diff * z[d];
    }
    const double kv = std::exp(-0.5 * quad);
    const double drift = -mu.dot(z);
    double quad_sigma = 0.0;
    for (Eigen::Index a = 0; a < k; ++a) {
      for (Eigen::Index b = 0; b < k; ++b) quad_sigma += z[a] * sigma(a, b) * z[b];
    }
    const double diffusion = 0.5 * (quad_sigma - trace_term);
    row[j] = gamma * kv * (drift + diffusion);
  }
  return row;
}

}  // namespace causalnav
