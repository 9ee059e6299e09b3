#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Core>

namespace causalnav {

/// Squared-exponential kernel parameters. Angular dimensions enter through their
/// wrapped difference.
class KernelConfig {
 public:
  KernelConfig(Eigen::VectorXd lengthscales, double regularization,
               std::vector<int> angular_dims = {});

  /// Pose kernel: 1 m for x and y, 0.8 rad for heading, lambda = 1e-3.
  static KernelConfig pose_default();
  static KernelConfig pose(double lengthscale_xy, double lengthscale_theta, double regularization);

  const Eigen::VectorXd& lengthscales() const { return lengthscales_; }
  Eigen::Index dim() const { return lengthscales_.size(); }
  double regularization() const { return regularization_; }
  bool is_angular(Eigen::Index d) const { return angular_[static_cast<std::size_t>(d)]; }

  /// x - y with angular coordinates wrapped to (-pi, pi].
  Eigen::VectorXd difference(const Eigen::Ref<const Eigen::VectorXd>& x,
                             const Eigen::Ref<const Eigen::VectorXd>& y) const;

 private:
  Eigen::VectorXd lengthscales_;
  Eigen::VectorXd inv_sq_;  // 1 / l^2
  double regularization_;
  std::vector<bool> angular_;

  friend class GramSystem;
  friend Eigen::RowVectorXd generator_row(const Eigen::Ref<const Eigen::VectorXd>&,
                                          const Eigen::Ref<const Eigen::MatrixXd>&,
                                          const Eigen::Ref<const Eigen::VectorXd>&,
                                          const Eigen::Ref<const Eigen::MatrixXd>&,
                                          const KernelConfig&, double);
};

double kernel_eval(const Eigen::Ref<const Eigen::VectorXd>& x,
                   const Eigen::Ref<const Eigen::VectorXd>& y, const KernelConfig& cfg);

/// Gradient of k(x, y) with respect to x.
Eigen::VectorXd kernel_grad(const Eigen::Ref<const Eigen::VectorXd>& x,
                            const Eigen::Ref<const Eigen::VectorXd>& y, const KernelConfig& cfg);

/// Hessian of k(x, y) with respect to x.
Eigen::MatrixXd kernel_hessian(const Eigen::Ref<const Eigen::VectorXd>& x,
                               const Eigen::Ref<const Eigen::VectorXd>& y,
                               const KernelConfig& cfg);

class SingularSystemError : public std::runtime_error {
 public:
  SingularSystemError(const std::string& what, double condition_estimate)
      : std::runtime_error(what), condition_estimate_(condition_estimate) {}
  /// Reciprocal condition estimate of the rejected system.
  double condition_estimate() const { return condition_estimate_; }

 private:
  double condition_estimate_;
};

/// Gram matrix over supporting points with a Cholesky factorization of
/// (lambda I + K), built once and reused.
class GramSystem {
 public:
  /// Columns of `supports` are the supporting points.
  GramSystem(Eigen::MatrixXd supports, KernelConfig cfg);

  Eigen::Index size() const { return supports_.cols(); }
  const Eigen::MatrixXd& supports() const { return supports_; }
  const KernelConfig& config() const { return cfg_; }
  const Eigen::MatrixXd& gram() const { return k_; }

  /// Solves (lambda I + K) x = b for one or more right-hand sides.
  Eigen::MatrixXd solve(const Eigen::Ref<const Eigen::MatrixXd>& b) const;

  /// k(x, supports) as a column vector.
  Eigen::VectorXd kernel_column(const Eigen::Ref<const Eigen::VectorXd>& x) const;

  double reciprocal_condition() const { return rcond_; }

 private:
  Eigen::MatrixXd supports_;
  KernelConfig cfg_;
  Eigen::MatrixXd k_;
  Eigen::LLT<Eigen::MatrixXd> llt_;
  double rcond_ = 0.0;
};

GramSystem build_gram(const Eigen::MatrixXd& supports, const KernelConfig& cfg);

/// Row i of the generator matrix: entry j is
/// gamma * (mu . grad_x k(s_i, s_j) + 0.5 * trace(sigma * hess_x k(s_i, s_j))).
Eigen::RowVectorXd generator_row(const Eigen::Ref<const Eigen::VectorXd>& mu,
                                 const Eigen::Ref<const Eigen::MatrixXd>& sigma,
                                 const Eigen::Ref<const Eigen::VectorXd>& s_i,
                                 const Eigen::Ref<const Eigen::MatrixXd>& supports,
                                 const KernelConfig& cfg, double gamma);

}  // namespace causalnav
