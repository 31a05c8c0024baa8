#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "iapf/psi.hpp"

namespace iapf {

// Fixed observation record y_1..y_T, one row per time step.
class Observations {
 public:
  explicit Observations(Eigen::MatrixXd rows);

  int horizon() const { return static_cast<int>(rows_.rows()); }
  int dim() const { return static_cast<int>(rows_.cols()); }
  Eigen::VectorXd row(int t) const { return rows_.row(t).transpose(); }
  const Eigen::MatrixXd& matrix() const { return rows_; }

 private:
  Eigen::MatrixXd rows_;
};

// One row per time step, comma-separated decimal columns, optional header.
Observations load_observations_csv(const std::string& path);

// Preprocessing helper for exchange-rate series: log-returns of consecutive
// prices, mean-corrected, optionally scaled (e.g. by 100 for percent
// returns). prices has length T+1 and the result length T.
Eigen::VectorXd mean_corrected_log_returns(const Eigen::VectorXd& prices, double scale = 1.0);

// State-dependent Gaussian-mixture transition density
//   f(x, .) = sum_k c_k(x) N(.; a_k(x), b_k(x)),   sum_k c_k(x) = 1.
// components(x) returns the triples with log c_k(x) in log_weight.
class TransitionKernel {
 public:
  using ComponentsFn = std::function<std::vector<GaussianComponent>(const Eigen::VectorXd&)>;
  TransitionKernel(int dim, ComponentsFn components)
      : dim_(dim), components_(std::move(components)) {}

  int dim() const { return dim_; }
  std::vector<GaussianComponent> components(const Eigen::VectorXd& x) const {
    return components_(x);
  }

 private:
  int dim_;
  ComponentsFn components_;
};

// log f(x, x').
double log_transition_density(const TransitionKernel& kernel, const Eigen::VectorXd& x,
                              const Eigen::VectorXd& x_next);

// Parameters of a linear Gaussian model: initial N(m, Sigma),
// transition N(Ax, B), observation N(Cx, D).
struct LinearGaussianSpec {
  Eigen::VectorXd m;
  Eigen::MatrixXd Sigma, A, B, C, D;
};

// A time-homogeneous HMM with observations bound in at construction:
// log_g(t, x) evaluates log g(x, y_t) against the stored record. The
// observation density is an opaque pointwise evaluator; only the initial
// density and the transition must be Gaussian mixtures.
class HmmModel {
 public:
  using LogGFn = std::function<double(int, const Eigen::VectorXd&)>;

  HmmModel(std::vector<GaussianComponent> initial, TransitionKernel transition, LogGFn log_g,
           Observations observations, std::optional<LinearGaussianSpec> lg = std::nullopt);

  int dim_state() const { return transition_.dim(); }
  int dim_obs() const { return observations_.dim(); }
  int horizon() const { return observations_.horizon(); }

  const std::vector<GaussianComponent>& initial() const { return initial_; }
  const TransitionKernel& transition() const { return transition_; }
  double log_g(int t, const Eigen::VectorXd& x) const { return log_g_(t, x); }
  const Observations& observations() const { return observations_; }

  bool is_linear_gaussian() const { return lg_.has_value(); }
  const LinearGaussianSpec& linear_gaussian() const;

  double log_initial_density(const Eigen::VectorXd& x) const;

 private:
  std::vector<GaussianComponent> initial_;
  TransitionKernel transition_;
  LogGFn log_g_;
  Observations observations_;
  std::optional<LinearGaussianSpec> lg_;
};

// mu = N(m, Sigma), f(x,.) = N(Ax, B), g(x,.) = N(Cx, D); tagged as
// linear-Gaussian for oracle and closed-form eligibility.
HmmModel build_linear_gaussian(const Eigen::VectorXd& m, const Eigen::MatrixXd& Sigma,
                               const Eigen::MatrixXd& A, const Eigen::MatrixXd& B,
                               const Eigen::MatrixXd& C, const Eigen::MatrixXd& D,
                               Observations observations);

// Stochastic volatility: mu = N(0, sigma^2/(1-alpha)^2), f(x,.) = N(alpha x,
// sigma^2), g(x,y) = N(y; 0, beta^2 exp(x)). The initial variance uses the
// (1-alpha)^2 denominator; see build_univariate_sv_stationary for the
// AR(1) stationary-variance alternative sigma^2/(1-alpha^2).
HmmModel build_univariate_sv(double alpha, double sigma, double beta, Observations observations);
HmmModel build_univariate_sv_stationary(double alpha, double sigma, double beta,
                                        Observations observations);

// Multivariate stochastic volatility: mu = N(m, U*), f(x,.) = N(m +
// diag(phi)(x-m), U), g(x,y) = prod_i N(y_i; 0, exp(x_i)), where U* is the
// stationary covariance U*_{ij} = U_{ij} / (1 - phi_i phi_j).
HmmModel build_multivariate_sv(const Eigen::VectorXd& m, const Eigen::VectorXd& phi,
                               const Eigen::MatrixXd& U, Observations observations);
Eigen::MatrixXd msv_stationary_covariance(const Eigen::VectorXd& phi, const Eigen::MatrixXd& U);

// f(x, psi) = int f(x, x') psi(x') dx', exact for mixture kernels.
double log_transition_apply_psi(const HmmModel& model, const Eigen::VectorXd& x,
                                const PsiFunction& psi);
double transition_apply_psi(const HmmModel& model, const Eigen::VectorXd& x,
                            const PsiFunction& psi);

// A_ij = alpha^(|i-j|+1), the banded family used in the benchmark studies.
Eigen::MatrixXd alpha_power_matrix(int d, double alpha);

// Synthetic observation records drawn from each family.
Observations simulate_linear_gaussian(const LinearGaussianSpec& spec, int horizon, Rng& rng);
Observations simulate_univariate_sv(double alpha, double sigma, double beta, int horizon,
                                    Rng& rng);
Observations simulate_multivariate_sv(const Eigen::VectorXd& m, const Eigen::VectorXd& phi,
                                      const Eigen::MatrixXd& U, int horizon, Rng& rng);

}  // namespace iapf
