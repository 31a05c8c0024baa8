#include "iapf/kalman.hpp"

#include <cmath>

namespace iapf {

namespace {
constexpr double kLog2Pi = 1.8378770664093454836;
}

KalmanResult kalman_filter_smoother(const HmmModel& model) {
  const LinearGaussianSpec& spec = model.linear_gaussian();
  const int horizon = model.horizon();
  const int d = model.dim_state();
  const int dy = model.dim_obs();
  const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(d, d);

  KalmanResult res;
  res.predictive_mean.resize(horizon);
  res.predictive_cov.resize(horizon);
  res.filtered_mean.resize(horizon);
  res.filtered_cov.resize(horizon);

  Eigen::VectorXd mp = spec.m;
  Eigen::MatrixXd pp = spec.Sigma;
  for (int t = 0; t < horizon; ++t) {
    if (t > 0) {
      mp = spec.A * res.filtered_mean[t - 1];
      pp = spec.A * res.filtered_cov[t - 1] * spec.A.transpose() + spec.B;
      pp = 0.5 * (pp + pp.transpose());
    }
    res.predictive_mean[t] = mp;
    res.predictive_cov[t] = pp;

    const Eigen::VectorXd y = model.observations().row(t);
    const Eigen::VectorXd innovation = y - spec.C * mp;
    Eigen::MatrixXd s = spec.C * pp * spec.C.transpose() + spec.D;
    s = 0.5 * (s + s.transpose());
    Eigen::LLT<Eigen::MatrixXd> llt(s);
    if (llt.info() != Eigen::Success)
      throw std::runtime_error("kalman: innovation covariance not positive definite");
    const Eigen::VectorXd w = llt.matrixL().solve(innovation);
    const double log_det_s =
        2.0 * Eigen::MatrixXd(llt.matrixL()).diagonal().array().log().sum();
    res.log_likelihood += -0.5 * (dy * kLog2Pi + log_det_s + w.squaredNorm());

    const Eigen::MatrixXd gain = llt.solve(spec.C * pp).transpose();  // P C' S^-1
    const Eigen::MatrixXd closed = eye - gain * spec.C;
    Eigen::MatrixXd pf =
        closed * pp * closed.transpose() + gain * spec.D * gain.transpose();
    res.filtered_mean[t] = mp + gain * innovation;
    res.filtered_cov[t] = 0.5 * (pf + pf.transpose());
  }

  res.smoothed_mean.resize(horizon);
  res.smoothed_cov.resize(horizon);
  res.smoothed_mean[horizon - 1] = res.filtered_mean[horizon - 1];
  res.smoothed_cov[horizon - 1] = res.filtered_cov[horizon - 1];
  for (int t = horizon - 2; t >= 0; --t) {
    const Eigen::MatrixXd& pp_next = res.predictive_cov[t + 1];
    Eigen::LLT<Eigen::MatrixXd> llt(pp_next);
    if (llt.info() != Eigen::Success)
      throw std::runtime_error("kalman: predictive covariance not positive definite");
    const Eigen::MatrixXd gain =
        llt.solve(spec.A * res.filtered_cov[t]).transpose();  // P_f A' P_p^-1
    res.smoothed_mean[t] =
        res.filtered_mean[t] + gain * (res.smoothed_mean[t + 1] - res.predictive_mean[t + 1]);
    Eigen::MatrixXd ps = res.filtered_cov[t] +
                         gain * (res.smoothed_cov[t + 1] - pp_next) * gain.transpose();
    res.smoothed_cov[t] = 0.5 * (ps + ps.transpose());
  }
  return res;
}

}  // namespace iapf
