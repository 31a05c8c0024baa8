#pragma once

#include "iapf/filter.hpp"

namespace iapf {

struct FitConfig {
  bool diagonal_only = true;  // restrict the fitted covariance to a diagonal
  int max_gauss_newton_iters = 60;
  double param_tolerance = 1e-8;
  // Positive floor added to the fitted Gaussian, keeping the twisted
  // mixture defensive. kTransitionCalibrated (default) sets it during the
  // backward sweep to 1/N of the geometric-mean transition mass
  // f(xi_{t-1}, N(.; m*, Sigma*)) over the previous step's particles, so
  // the defensive component holds an O(1/N) share of the twisted mixture
  // at typical states in any dimension; a standalone fit without model
  // context falls back to peak density / N^2. The remaining rules fix the
  // floor at peak/N, peak/N^2 or a constant.
  enum class Regularizer { kTransitionCalibrated, kPeakOverN, kPeakOverNSquared, kFixed };
  Regularizer regularizer = Regularizer::kTransitionCalibrated;
  double fixed_value = 1e-8;  // used with kFixed
};

// Support points (d x N) and log targets for one least-squares twist fit;
// needs N >= d + 2 finite targets.
struct FitProblem {
  Eigen::MatrixXd support;
  Eigen::VectorXd log_targets;
};

struct FitDiagnostics {
  std::vector<double> objectives;  // accepted objective values, non-increasing
  bool fallback_used = false;
  bool degenerate_targets = false;
  double lambda = 0.0;  // scale in the N(xi; m, Sigma) ~ lambda t convention
};

// Closed-form minimizer of sum_i [N_i - lambda t_i]^2 in lambda.
double profile_lambda(const Eigen::VectorXd& gaussian_values, const Eigen::VectorXd& targets);

// Least-squares fit of one Gaussian to positive targets at the support
// points. The shape comes from weighted least squares on the log
// residuals (a closed-form quadratic regression refined by damped
// Gauss-Newton), which reads the decay structure out of every particle;
// a fit of the linear-domain residuals collapses onto the few largest
// targets as soon as they span many orders of magnitude. The moment
// matched initializer remains the fallback and flat targets reduce to it
// directly. The returned twist is the fitted Gaussian plus the positive
// floor described in FitConfig.
PsiFunction fit_psi(const FitProblem& problem, int n_for_regularizer, const FitConfig& config,
                    FitDiagnostics* diagnostics = nullptr);

// Per-particle regression targets g(xi_t^i, y_t) f(xi_t^i, psi_next) in log
// form; pass psi_next = nullptr at the final step (unit continuation).
Eigen::VectorXd backward_targets(const HmmModel& model, int t, const Eigen::MatrixXd& particles,
                                 const PsiFunction* psi_next);

// Full backward sweep t = T..1: targets from the filter's particles, one
// fit per step, floors calibrated against the transition as described in
// FitConfig. Throws with the failing step attached.
PsiSequence approximate_psi_sequence(const HmmModel& model, const FilterOutput& out,
                                     const FitConfig& config);

}  // namespace iapf
