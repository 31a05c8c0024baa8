#pragma once

#include <Eigen/Dense>
#include <vector>

#include "iapf/rng.hpp"

namespace iapf {

// Log-domain particle weights. Entries must be finite or -inf with at
// least one finite entry; validated at construction.
class WeightVector {
 public:
  explicit WeightVector(Eigen::VectorXd log_weights);

  int size() const { return static_cast<int>(log_weights_.size()); }
  const Eigen::VectorXd& log_weights() const { return log_weights_; }

  // Linear-domain probabilities, max-shifted before exponentiation.
  Eigen::VectorXd probabilities() const;

 private:
  Eigen::VectorXd log_weights_;
};

// Effective sample size (sum W)^2 / sum W^2 in [1, N].
double ess(const WeightVector& w);

// count i.i.d. indices with probability proportional to the weights.
// Uses a Walker alias table when count > N and inverse-CDF bisection
// otherwise, so single draws avoid the table build.
std::vector<int> categorical_sample(Rng& rng, const WeightVector& w, int count);

}  // namespace iapf
