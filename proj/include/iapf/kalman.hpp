#pragma once

#include "iapf/hmm.hpp"

namespace iapf {

struct KalmanResult {
  std::vector<Eigen::VectorXd> predictive_mean, filtered_mean, smoothed_mean;
  std::vector<Eigen::MatrixXd> predictive_cov, filtered_cov, smoothed_cov;
  double log_likelihood = 0.0;
};

// Exact filter/smoother/likelihood for a linear Gaussian model; covariance
// updates in Joseph form. Throws when the model is not tagged.
KalmanResult kalman_filter_smoother(const HmmModel& model);

inline double kalman_log_likelihood(const HmmModel& model) {
  return kalman_filter_smoother(model).log_likelihood;
}

}  // namespace iapf
