#pragma once

#include <stdexcept>

#include "iapf/hmm.hpp"

namespace iapf {

// Requested twist cannot be represented in the constant-plus-mixture class
// (e.g. the fully adapted twist for a stochastic volatility model).
struct UnrepresentablePsi : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Rewrite v -> N(y; Hv, R) as exp(log_scale) N(v; mean, cov). Needs H of
// full column rank (H' R^-1 H positive definite).
ScaledGaussian gaussian_in_state_from_observation(const Eigen::MatrixXd& H,
                                                  const Eigen::MatrixXd& R,
                                                  const Eigen::VectorXd& y);

// The twisted model (mu_psi, f_psi, g_psi) for a base model and a twisting
// sequence. Samplers draw from the normalized product mixtures
// mu_psi ~ mu psi_1 and f_psi(x,.) ~ f(x,.) psi_t; the twisted potentials
// g_psi carry psi_tilde_t / psi_t and fold psi_tilde_0 into the first one.
// Time indices are 0-based throughout: psi[t] plays the role of psi_{t+1}.
class TwistedModel {
 public:
  TwistedModel(HmmModel model, PsiSequence psi);

  const HmmModel& base() const { return model_; }
  const PsiSequence& psi() const { return psi_; }
  int horizon() const { return model_.horizon(); }

  double log_psi_tilde0() const { return log_psi_tilde0_; }
  // log f(x, psi_{t+1}) for t < T-1, 0 at t = T-1.
  double log_psi_tilde(int t, const Eigen::VectorXd& x) const;

  Eigen::VectorXd sample_initial(Rng& rng) const;
  double log_initial_density(const Eigen::VectorXd& x) const;

  // Transition into step t (t >= 1).
  Eigen::VectorXd sample_transition(int t, const Eigen::VectorXd& x_prev, Rng& rng) const;
  double log_transition_density(int t, const Eigen::VectorXd& x_prev,
                                const Eigen::VectorXd& x) const;

  double log_g_twisted(int t, const Eigen::VectorXd& x) const;

 private:
  struct Mixture {
    double log_norm;
    std::vector<double> log_w;  // unnormalized
    std::vector<GaussianComponent> comps;
  };
  static Mixture twist_mixture(const std::vector<GaussianComponent>& base,
                               const PsiFunction& psi);
  static Eigen::VectorXd sample_mixture(const Mixture& mix, Rng& rng);
  static double log_mixture_density(const Mixture& mix, const Eigen::VectorXd& x);

  HmmModel model_;
  PsiSequence psi_;
  Mixture initial_mix_;
  double log_psi_tilde0_;
};

inline TwistedModel build_twisted_model(HmmModel model, PsiSequence psi) {
  return TwistedModel(std::move(model), std::move(psi));
}

// log of the twisted path integrand minus log of the base integrand; zero
// up to floating error for any positive twisting sequence.
double integrand_log_ratio(const HmmModel& model, const PsiSequence& psi,
                           const std::vector<Eigen::VectorXd>& path);

struct PsiStarResult {
  PsiSequence psi;
  double log_psi_tilde0;  // equals the log marginal likelihood
};

// Closed-form backward recursion psi*_T ~ g(., y_T),
// psi*_t = g(., y_t) f(., psi*_{t+1}) for a linear Gaussian model, each
// element stored as a single scaled Gaussian. Needs C (and A for T >= 2)
// of full column rank.
PsiStarResult exact_psi_star_lgssm(const HmmModel& model);

// psi_t proportional to g(., y_t): the fully adapted special case. Throws
// UnrepresentablePsi when the observation density is not a Gaussian in x.
PsiSequence fully_adapted_psi(const HmmModel& model);

}  // namespace iapf
