#pragma once

#include "iapf/iapf.hpp"
#include "iapf/kalman.hpp"

namespace iapf {

// Scalar prior densities for the component-wise random walk sampler.
// Inverse-gamma uses the shape-scale convention with density proportional
// to x^(-shape-1) exp(-scale/x). The *_on_square variants place the named
// prior on theta^2 while the chain moves on theta > 0; the 2 theta Jacobian
// is included.
class Prior {
 public:
  static Prior uniform(double a, double b);
  static Prior inverse_gamma(double shape, double scale);
  static Prior inverse_gamma_on_square(double shape, double scale);
  static Prior beta(double a, double b);
  static Prior symmetric_triangular();  // on [-1, 1]
  static Prior improper_flat();

  double log_density(double x) const;
  bool in_support(double x) const { return std::isfinite(log_density(x)); }

 private:
  enum class Kind { kUniform, kInverseGamma, kInverseGammaSq, kBeta, kTriangular, kFlat };
  Kind kind_ = Kind::kFlat;
  double a_ = 0.0, b_ = 0.0, log_norm_ = 0.0;
};

struct EstimatorSpec {
  enum class Kind { kKalman, kBpf, kIapf };
  Kind kind = Kind::kKalman;
  int n_particles = 1000;  // BPF
  double kappa = 0.5;      // BPF
  IapfConfig iapf;
};

struct MhConfig {
  int chain_length = 1000;  // one step = one component update
  Eigen::VectorXd proposal_sd;
  EstimatorSpec estimator;
  std::uint64_t seed = 0;
};

struct Chain {
  Eigen::MatrixXd samples;     // chain_length x p, state after each step
  Eigen::VectorXd log_z_trace; // cached estimate after each step
  std::vector<long> proposals_per_component;
  std::vector<long> accepts_per_component;
  long estimator_calls = 0;
  long estimator_failures = 0;

  double acceptance_rate(int component) const {
    return static_cast<double>(accepts_per_component[component]) /
           static_cast<double>(proposals_per_component[component]);
  }
};

// Particle marginal Metropolis-Hastings with a component-wise Gaussian
// random walk in fixed cyclic order. The cached estimate for the current
// state is never refreshed; out-of-support proposals are rejected without
// invoking the estimator; an estimator failure counts as a rejection.
Chain run_pmmh(const std::function<HmmModel(const Eigen::VectorXd&)>& model_builder,
               const std::vector<Prior>& priors, const Eigen::VectorXd& theta0,
               const MhConfig& config);

// Integrated autocorrelation time by Geyer's initial positive sequence
// estimator; 1 for i.i.d. samples.
double iact(const Eigen::VectorXd& samples);

inline double adjusted_sample_size(const Eigen::VectorXd& samples) {
  return static_cast<double>(samples.size()) / iact(samples);
}

}  // namespace iapf
