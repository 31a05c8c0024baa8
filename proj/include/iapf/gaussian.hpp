#pragma once

#include <Eigen/Dense>
#include <memory>
#include <vector>

#include "iapf/rng.hpp"

namespace iapf {

// Symmetric positive-definite covariance with a flagged diagonal
// representation (O(d) evaluation) next to the dense one (Cholesky factor
// computed once at construction). Copies share the factorization.
class Covariance {
 public:
  static Covariance diagonal(Eigen::VectorXd diag);
  static Covariance dense(Eigen::MatrixXd mat);
  static Covariance identity(int dim);

  int dim() const { return data_->dim; }
  bool is_diagonal() const { return data_->is_diag; }
  double log_det() const { return data_->log_det; }

  // Entries of the diagonal representation (diagonal case only).
  const Eigen::VectorXd& diag() const;
  // Dense view; materializes the diagonal on demand.
  Eigen::MatrixXd matrix() const;

  Eigen::VectorXd solve(const Eigen::VectorXd& v) const;  // Sigma^{-1} v
  double quad_form(const Eigen::VectorXd& v) const;       // v' Sigma^{-1} v
  Eigen::VectorXd unit_transform(const Eigen::VectorXd& z) const;  // L z, Sigma = L L'

 private:
  struct Data {
    bool is_diag = false;
    int dim = 0;
    double log_det = 0.0;
    Eigen::VectorXd diag;       // diagonal case
    Eigen::VectorXd sqrt_diag;  // diagonal case
    Eigen::MatrixXd mat;        // dense case
    Eigen::MatrixXd chol;       // dense case, lower factor
  };
  explicit Covariance(std::shared_ptr<const Data> d) : data_(std::move(d)) {}
  std::shared_ptr<const Data> data_;
};

// Sum of covariances (Gaussian convolution); stays diagonal when both are.
Covariance covariance_sum(const Covariance& a, const Covariance& b);

// Picks the diagonal representation when every off-diagonal entry is zero.
Covariance make_covariance(const Eigen::MatrixXd& mat);

// One mixture component: weight is the natural-log mixture coefficient.
struct GaussianComponent {
  Eigen::VectorXd mean;
  Covariance cov;
  double log_weight = 0.0;
};

// log N(x; mean, cov); ignores the component's mixture weight.
double log_gaussian_density(const Eigen::VectorXd& x, const GaussianComponent& comp);

// Gaussian with an explicit log-scale: exp(log_scale) * N(.; comp).
struct ScaledGaussian {
  double log_scale = 0.0;
  GaussianComponent comp;
};

// Pointwise product of two Gaussian densities:
//   N(x; a1, b1) N(x; a2, b2) = exp(log_scale) N(x; a, b)
// with b = (b1^-1 + b2^-1)^-1, a = b (b1^-1 a1 + b2^-1 a2) and
// log_scale = log N(a1; a2, b1 + b2).
ScaledGaussian gaussian_product(const GaussianComponent& c1, const GaussianComponent& c2);

// Draw from N(mean, cov).
Eigen::VectorXd sample_gaussian(Rng& rng, const GaussianComponent& comp);

// log sum / mean of exponentials, max-shifted; tolerates -inf entries.
double log_sum_exp(const Eigen::VectorXd& v);
double log_mean_exp(const Eigen::VectorXd& v);

}  // namespace iapf
