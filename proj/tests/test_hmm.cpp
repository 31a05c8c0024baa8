#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <fstream>

#include "test_util.hpp"

using namespace iapf;
using iapf::testing::integrate;
using iapf::testing::normal_pdf;
using iapf::testing::random_observations;

namespace {

Eigen::VectorXd vec1(double x) { return Eigen::VectorXd::Constant(1, x); }

// Two-component scalar kernel with state-dependent weights; in the mixture
// class by construction.
HmmModel two_component_model(Observations ys) {
  const Covariance v1 = Covariance::diagonal(vec1(0.5));
  const Covariance v2 = Covariance::diagonal(vec1(1.5));
  TransitionKernel kernel(1, [v1, v2](const Eigen::VectorXd& x) {
    const double w = 0.3 + 0.4 / (1.0 + x[0] * x[0]);
    return std::vector<GaussianComponent>{{0.8 * x, v1, std::log(w)},
                                          {-0.2 * x, v2, std::log(1.0 - w)}};
  });
  const Eigen::MatrixXd y = ys.matrix();
  auto log_g = [y](int t, const Eigen::VectorXd& x) {
    const double r = y(t, 0) - x[0];
    return -0.5 * (1.8378770664093454836 + r * r);
  };
  std::vector<GaussianComponent> init{{vec1(0.0), Covariance::diagonal(vec1(1.0)), 0.0}};
  return HmmModel(std::move(init), std::move(kernel), std::move(log_g), std::move(ys));
}

}  // namespace

TEST_CASE("linear gaussian builder") {
  Rng rng(1);
  const double alpha = 0.5;
  const Eigen::MatrixXd a = alpha_power_matrix(2, alpha);
  CHECK(a(0, 0) == doctest::Approx(0.5));
  CHECK(a(0, 1) == doctest::Approx(0.25));
  CHECK(a(1, 0) == doctest::Approx(0.25));
  CHECK(a(1, 1) == doctest::Approx(0.5));

  const HmmModel model = iapf::testing::benchmark_lg_model(2, alpha, random_observations(rng, 5, 2));
  CHECK(model.is_linear_gaussian());
  CHECK(model.dim_state() == 2);
  CHECK(model.linear_gaussian().A.isApprox(a));

  // Wrong observation shape.
  const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(2, 2);
  CHECK_THROWS_AS(build_linear_gaussian(Eigen::VectorXd::Zero(2), eye, a, eye,
                                        Eigen::MatrixXd::Identity(3, 2),
                                        Eigen::MatrixXd::Identity(3, 3),
                                        random_observations(rng, 5, 2)),
                  std::invalid_argument);
}

TEST_CASE("univariate sv builder") {
  Rng rng(2);
  const HmmModel model = build_univariate_sv(0.95, std::sqrt(0.02), 0.5,
                                             random_observations(rng, 4));
  CHECK(model.initial()[0].cov.diag()[0] == doctest::Approx(8.0).epsilon(1e-12));

  // alpha -> 0 degenerates to the step variance.
  const HmmModel limit = build_univariate_sv(1e-12, 0.3, 0.5, random_observations(rng, 4));
  CHECK(limit.initial()[0].cov.diag()[0] == doctest::Approx(0.09).epsilon(1e-9));

  CHECK_THROWS_AS(build_univariate_sv(1.0, 0.3, 0.5, random_observations(rng, 4)),
                  std::invalid_argument);

  const HmmModel stat = build_univariate_sv_stationary(0.95, std::sqrt(0.02), 0.5,
                                                       random_observations(rng, 4));
  CHECK(stat.initial()[0].cov.diag()[0] ==
        doctest::Approx(0.02 / (1.0 - 0.95 * 0.95)).epsilon(1e-12));
}

TEST_CASE("multivariate sv builder") {
  Rng rng(3);
  // d = 1 fixed point: U* = phi U* phi + U solved by iteration.
  {
    double u_star = 1.0, phi = 0.5, u = 0.75;
    for (int it = 0; it < 200; ++it) u_star = phi * u_star * phi + u;
    const Eigen::MatrixXd got =
        msv_stationary_covariance(vec1(phi), Eigen::MatrixXd::Constant(1, 1, u));
    CHECK(got(0, 0) == doctest::Approx(u_star).epsilon(1e-10));
    CHECK(got(0, 0) == doctest::Approx(1.0).epsilon(1e-10));
  }

  // phi = 0 leaves U unchanged.
  Eigen::MatrixXd u(2, 2);
  u << 0.5, 0.1, 0.1, 0.4;
  CHECK(msv_stationary_covariance(Eigen::VectorXd::Zero(2), u).isApprox(u));

  Eigen::VectorXd phi(2);
  phi << 1.0, 0.5;
  CHECK_THROWS_AS(msv_stationary_covariance(phi, u), std::invalid_argument);

  // Discrete Lyapunov identity for a non-trivial case.
  Eigen::VectorXd phi2(3);
  phi2 << 0.9, -0.3, 0.6;
  Eigen::MatrixXd a(3, 3);
  a << 1.0, 0.2, 0.0, 0.2, 0.8, 0.1, 0.0, 0.1, 0.9;
  const Eigen::MatrixXd u_star = msv_stationary_covariance(phi2, a);
  const Eigen::MatrixXd residual =
      u_star - phi2.asDiagonal() * u_star * phi2.asDiagonal() - a;
  CHECK(residual.cwiseAbs().maxCoeff() < 1e-10);

  const HmmModel model = build_multivariate_sv(Eigen::VectorXd::Zero(3), phi2, a,
                                               random_observations(rng, 6, 3));
  CHECK(model.dim_state() == 3);
  CHECK_FALSE(model.is_linear_gaussian());
}

TEST_CASE("transition mixture weights sum to one at random states") {
  Rng rng(4);
  std::vector<HmmModel> models;
  models.push_back(iapf::testing::benchmark_lg_model(3, 0.42, random_observations(rng, 3, 3)));
  models.push_back(build_univariate_sv(0.9, 0.3, 0.6, random_observations(rng, 3)));
  models.push_back(two_component_model(random_observations(rng, 3)));
  for (const auto& model : models) {
    for (int rep = 0; rep < 100; ++rep) {
      Eigen::VectorXd x(model.dim_state());
      for (int i = 0; i < x.size(); ++i) x[i] = 3.0 * rng.normal();
      Eigen::VectorXd lw;
      const auto comps = model.transition().components(x);
      lw.resize(comps.size());
      for (std::size_t k = 0; k < comps.size(); ++k) lw[static_cast<int>(k)] = comps[k].log_weight;
      CHECK(std::abs(log_sum_exp(lw)) < 1e-12);
    }
  }
}

TEST_CASE("transition apply psi") {
  Rng rng(5);
  const HmmModel lg = iapf::testing::scalar_lg_model(0, 1, 0.7, 0.5, 1, 1,
                                                     random_observations(rng, 3));

  // Constant psi integrates to its level.
  for (double level : {1.0, 0.25, 7.0}) {
    const PsiFunction psi = PsiFunction::constant(1, level);
    CHECK(transition_apply_psi(lg, vec1(0.3), psi) == doctest::Approx(level).epsilon(1e-12));
  }

  // Single Gaussian psi: f(x, psi) = N(a x; m, b + s), checked by quadrature.
  {
    const PsiFunction psi(1, 0.0, {{vec1(0.4), Covariance::diagonal(vec1(0.9)), 0.0}});
    const double x0 = -0.8;
    const double got = transition_apply_psi(lg, vec1(x0), psi);
    CHECK(got == doctest::Approx(normal_pdf(0.7 * x0, 0.4, 0.5 + 0.9)).epsilon(1e-12));
    const double oracle = integrate(
        [&](double u) { return normal_pdf(u, 0.7 * x0, 0.5) * normal_pdf(u, 0.4, 0.9); }, -30,
        30);
    CHECK(got == doctest::Approx(oracle).epsilon(1e-8));
  }

  // Mixture kernel: average of the per-component integrals.
  {
    const Covariance v = Covariance::diagonal(vec1(1.0));
    TransitionKernel half_half(1, [v](const Eigen::VectorXd& x) {
      return std::vector<GaussianComponent>{{x, v, std::log(0.5)},
                                            {2.0 * x, v, std::log(0.5)}};
    });
    Observations ys = random_observations(rng, 2);
    const Eigen::MatrixXd ymat = ys.matrix();
    HmmModel model({{vec1(0), v, 0.0}}, half_half,
                   [ymat](int t, const Eigen::VectorXd& x) {
                     return std::log(normal_pdf(ymat(t, 0), x[0], 1.0));
                   },
                   std::move(ys));
    const PsiFunction psi(1, 0.0, {{vec1(0.0), Covariance::diagonal(vec1(0.5)), 0.0}});
    const double x0 = 1.1;
    const double expected = 0.5 * normal_pdf(x0, 0.0, 1.5) + 0.5 * normal_pdf(2 * x0, 0.0, 1.5);
    CHECK(transition_apply_psi(model, vec1(x0), psi) ==
          doctest::Approx(expected).epsilon(1e-12));
  }

  // psi identically one stays one for every model family and state.
  const HmmModel sv = build_univariate_sv(0.9, 0.3, 0.6, random_observations(rng, 3));
  for (int rep = 0; rep < 20; ++rep) {
    const double x0 = 4.0 * rng.normal();
    CHECK(transition_apply_psi(lg, vec1(x0), PsiFunction::one(1)) ==
          doctest::Approx(1.0).epsilon(1e-12));
    CHECK(transition_apply_psi(sv, vec1(x0), PsiFunction::one(1)) ==
          doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("observations csv round trip") {
  const std::string path = "test_obs_tmp.csv";
  {
    std::ofstream out(path);
    out << "col_a,col_b\n";
    out << "1.5,-2.25\n";
    out << "0.125,3.0\n";
    out << "\n";
  }
  const Observations obs = load_observations_csv(path);
  CHECK(obs.horizon() == 2);
  CHECK(obs.dim() == 2);
  CHECK(obs.matrix()(0, 1) == doctest::Approx(-2.25));
  CHECK(obs.matrix()(1, 0) == doctest::Approx(0.125));

  {
    std::ofstream out(path);
    out << "1.0,2.0\n1.0\n";
  }
  CHECK_THROWS(load_observations_csv(path));
  std::remove(path.c_str());
  CHECK_THROWS(load_observations_csv(path));
}

TEST_CASE("mean corrected log returns") {
  Eigen::VectorXd prices(4);
  prices << 100.0, 110.0, 99.0, 104.0;
  const Eigen::VectorXd r = mean_corrected_log_returns(prices, 100.0);
  CHECK(r.size() == 3);
  CHECK(std::abs(r.mean()) < 1e-12);
  // First uncentered return is log(1.1).
  const double mean_raw = (std::log(110.0 / 100.0) + std::log(99.0 / 110.0) +
                           std::log(104.0 / 99.0)) / 3.0;
  CHECK(r[0] == doctest::Approx(100.0 * (std::log(1.1) - mean_raw)).epsilon(1e-12));

  Eigen::VectorXd bad(2);
  bad << 1.0, -2.0;
  CHECK_THROWS_AS(mean_corrected_log_returns(bad), std::invalid_argument);
}

TEST_CASE("simulators produce records of the right shape") {
  Rng rng(6);
  LinearGaussianSpec spec{Eigen::VectorXd::Zero(2), Eigen::MatrixXd::Identity(2, 2),
                          alpha_power_matrix(2, 0.4), Eigen::MatrixXd::Identity(2, 2),
                          Eigen::MatrixXd::Identity(2, 2), Eigen::MatrixXd::Identity(2, 2)};
  CHECK(simulate_linear_gaussian(spec, 7, rng).horizon() == 7);
  CHECK(simulate_univariate_sv(0.9, 0.2, 0.5, 9, rng).dim() == 1);
  Eigen::MatrixXd u(2, 2);
  u << 0.3, 0.05, 0.05, 0.3;
  Eigen::VectorXd phi(2);
  phi << 0.9, 0.8;
  const Observations obs = simulate_multivariate_sv(Eigen::VectorXd::Zero(2), phi, u, 5, rng);
  CHECK(obs.horizon() == 5);
  CHECK(obs.dim() == 2);
}
