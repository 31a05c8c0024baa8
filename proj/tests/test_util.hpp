#pragma once

#include <cmath>
#include <functional>
#include <stdexcept>

#include "iapf/hmm.hpp"

namespace iapf::testing {

// Adaptive Simpson quadrature, refined until successive halvings agree to
// the requested relative tolerance. Independent of the library's grid
// module on purpose: tests use this as their own oracle.
inline double integrate(const std::function<double(double)>& f, double lo, double hi,
                        double rel_tol = 1e-9, int max_doublings = 22) {
  int n = 64;
  auto simpson = [&](int segments) {
    const double h = (hi - lo) / segments;
    double acc = f(lo) + f(hi);
    for (int i = 1; i < segments; ++i) acc += f(lo + i * h) * (i % 2 == 1 ? 4.0 : 2.0);
    return acc * h / 3.0;
  };
  double prev = simpson(n);
  for (int it = 0; it < max_doublings; ++it) {
    n *= 2;
    const double cur = simpson(n);
    if (std::abs(cur - prev) <= rel_tol * (std::abs(cur) + 1e-300)) return cur;
    prev = cur;
  }
  return prev;
}

inline double normal_pdf(double x, double mean, double variance) {
  const double r = x - mean;
  return std::exp(-0.5 * r * r / variance) / std::sqrt(2.0 * M_PI * variance);
}

// Random scalar observation record for test models.
inline Observations random_observations(Rng& rng, int horizon, int dim = 1, double spread = 1.0) {
  Eigen::MatrixXd y(horizon, dim);
  for (int t = 0; t < horizon; ++t)
    for (int j = 0; j < dim; ++j) y(t, j) = spread * rng.normal();
  return Observations(std::move(y));
}

// Scalar linear Gaussian model with the given parameters and observations.
inline HmmModel scalar_lg_model(double m, double sigma, double a, double b, double c, double d,
                                Observations ys) {
  const auto mat = [](double v) { return Eigen::MatrixXd::Constant(1, 1, v); };
  return build_linear_gaussian(Eigen::VectorXd::Constant(1, m), mat(sigma), mat(a), mat(b),
                               mat(c), mat(d), std::move(ys));
}

// The identity-everywhere benchmark family: m = 0, Sigma = B = C = D = I,
// A_ij = alpha^(|i-j|+1).
inline HmmModel benchmark_lg_model(int d, double alpha, Observations ys) {
  const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(d, d);
  return build_linear_gaussian(Eigen::VectorXd::Zero(d), eye, alpha_power_matrix(d, alpha), eye,
                               eye, eye, std::move(ys));
}

}  // namespace iapf::testing
