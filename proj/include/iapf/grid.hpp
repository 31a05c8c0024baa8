#pragma once

#include "iapf/twist.hpp"

namespace iapf {

// Equally spaced quadrature grid with trapezoidal weights.
struct Grid1D {
  double lo = 0.0, hi = 1.0;
  int n_nodes = 2048;

  Grid1D(double lo_, double hi_, int n_nodes_);
  double spacing() const { return (hi - lo) / (n_nodes - 1); }
  Eigen::VectorXd nodes() const;
  Eigen::VectorXd weights() const;
};

// Covers the latent marginals of a scalar-state model within +-10 marginal
// standard deviations, propagated through the transition's first two
// moments.
Grid1D default_grid_for(const HmmModel& model, int n_nodes = 2048);

// Brute-force likelihood by forward trapezoidal quadrature; d = 1 only.
double grid_log_likelihood_1d(const HmmModel& model, const Grid1D& grid);

struct GridPsiStar {
  Eigen::MatrixXd log_values;  // horizon x n_nodes
  double log_psi_tilde0 = 0.0;
};

// Backward quadrature of psi*_t = g(., y_t) f(., psi*_{t+1}); the returned
// normalizer log_psi_tilde0 equals the log likelihood.
GridPsiStar grid_backward_psi_star_1d(const HmmModel& model, const Grid1D& grid);

struct GridVariance {
  double value = 0.0;            // sum of ratio-of-expectations terms
  double chi_square_form = 0.0;  // equivalent sum of chi-square divergences
};

// Asymptotic variance of the normalized estimate for a given twist,
// evaluated by forward-backward quadrature of the twisted smoothing and
// predictive marginals; both equivalent printed forms are returned so they
// can be cross-checked.
GridVariance grid_asymptotic_variance_1d(const HmmModel& model, const PsiSequence& psi,
                                         const Grid1D& grid);

// Independent route for the bootstrap special case,
// sigma^2 = sum_t { E[psi-bar*_t | Y_{1:T}] - 1 }, computed directly on the
// untwisted model.
double grid_bpf_asymptotic_variance_1d(const HmmModel& model, const Grid1D& grid);

}  // namespace iapf
