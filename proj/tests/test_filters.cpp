#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "iapf/filter.hpp"
#include "iapf/kalman.hpp"
#include "test_util.hpp"

using namespace iapf;
using iapf::testing::random_observations;

namespace {

Eigen::VectorXd vec1(double x) { return Eigen::VectorXd::Constant(1, x); }

// Always-resample reference: the adaptive filter with kappa = 1 must
// reproduce this bit for bit, substreams included.
FilterOutput reference_always_resample(const HmmModel& model, const PsiSequence& psi,
                                       const FilterConfig& config) {
  const TwistedModel tm(model, psi);
  const int horizon = model.horizon();
  const int n = config.n_particles;
  FilterOutput out;
  out.n_particles = n;
  out.particles.assign(horizon, Eigen::MatrixXd(model.dim_state(), n));
  out.log_weights.assign(horizon, Eigen::VectorXd(n));
  out.per_step_log_means.resize(horizon);
  for (int i = 0; i < n; ++i) {
    Rng rng(mix_seed(mix_seed(config.seed, 1), static_cast<std::uint64_t>(i)));
    const Eigen::VectorXd x = tm.sample_initial(rng);
    out.particles[0].col(i) = x;
    out.log_weights[0][i] = tm.log_g_twisted(0, x);
  }
  out.per_step_log_means[0] = log_mean_exp(out.log_weights[0]);
  for (int t = 1; t < horizon; ++t) {
    Rng resample_rng(mix_seed(config.seed, 2 * static_cast<std::uint64_t>(t)));
    const auto parents =
        categorical_sample(resample_rng, WeightVector(out.log_weights[t - 1]), n);
    out.resampling_times.push_back(t - 1);
    const std::uint64_t key = mix_seed(config.seed, 2 * static_cast<std::uint64_t>(t) + 1);
    for (int i = 0; i < n; ++i) {
      Rng rng(mix_seed(key, static_cast<std::uint64_t>(i)));
      const Eigen::VectorXd x = tm.sample_transition(t, out.particles[t - 1].col(parents[i]), rng);
      out.particles[t].col(i) = x;
      out.log_weights[t][i] = tm.log_g_twisted(t, x);
    }
    out.per_step_log_means[t] = log_mean_exp(out.log_weights[t]);
  }
  out.log_z = out.per_step_log_means[horizon - 1];
  for (int t : out.resampling_times) out.log_z += out.per_step_log_means[t];
  return out;
}

}  // namespace

TEST_CASE("bpf and the constant-psi filter coincide bit for bit") {
  Rng rng(11);
  const HmmModel model = iapf::testing::scalar_lg_model(0, 1, 0.8, 0.5, 1, 1,
                                                        random_observations(rng, 12));
  FilterConfig fc;
  fc.n_particles = 64;
  fc.kappa = 0.5;
  fc.seed = 999;
  fc.record_ancestry = true;
  const FilterOutput a = run_bpf(model, fc);
  const FilterOutput b =
      run_psi_apf(model, PsiSequence::all_constant(model.horizon(), 1), fc);
  CHECK(a.log_z == b.log_z);
  CHECK(a.resampling_times == b.resampling_times);
  for (int t = 0; t < model.horizon(); ++t) {
    CHECK((a.particles[t] - b.particles[t]).cwiseAbs().maxCoeff() == 0.0);
    CHECK((a.log_weights[t] - b.log_weights[t]).cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("kappa one equals the always-resample reference bit for bit") {
  Rng rng(13);
  const HmmModel model = iapf::testing::scalar_lg_model(0, 1, 0.8, 0.5, 1, 1,
                                                        random_observations(rng, 10));
  PsiSequence psi = PsiSequence::all_constant(10, 1);
  FilterConfig fc;
  fc.n_particles = 50;
  fc.kappa = 1.0;
  fc.seed = 4242;
  const FilterOutput got = run_psi_apf(model, psi, fc);
  const FilterOutput ref = reference_always_resample(model, psi, fc);
  CHECK(static_cast<int>(got.resampling_times.size()) == 9);
  CHECK(got.log_z == ref.log_z);
  for (int t = 0; t < 10; ++t)
    CHECK((got.particles[t] - ref.particles[t]).cwiseAbs().maxCoeff() == 0.0);

  // After every resampling step the stored weights are fresh potentials.
  const TwistedModel tm(model, psi);
  for (int t = 1; t < 10; ++t)
    for (int i = 0; i < fc.n_particles; ++i)
      CHECK(got.log_weights[t][i] ==
            doctest::Approx(tm.log_g_twisted(t, got.particles[t].col(i))).epsilon(1e-14));
}

TEST_CASE("kappa zero never resamples and accumulates pure importance weights") {
  Rng rng(17);
  const HmmModel model = iapf::testing::scalar_lg_model(0, 1, 0.8, 0.5, 1, 1,
                                                        random_observations(rng, 8));
  FilterConfig fc;
  fc.n_particles = 32;
  fc.kappa = 0.0;
  fc.seed = 7;
  fc.record_ancestry = true;
  const FilterOutput out = run_bpf(model, fc);
  CHECK(out.resampling_times.empty());

  // Lineages are the identity.
  const Eigen::MatrixXi b = ancestral_lineages(out);
  for (int t = 0; t < 8; ++t)
    for (int i = 0; i < 32; ++i) CHECK(b(t, i) == i);

  // Terminal weights are the accumulated potentials along each path.
  const TwistedModel tm(model, PsiSequence::all_constant(8, 1));
  for (int i = 0; i < 32; ++i) {
    double acc = 0.0;
    for (int t = 0; t < 8; ++t) acc += tm.log_g_twisted(t, out.particles[t].col(i));
    CHECK(out.log_weights[7][i] == doctest::Approx(acc).epsilon(1e-13));
  }

  // N = 1: log_z is the single path's accumulated potential.
  FilterConfig single;
  single.n_particles = 1;
  single.kappa = 0.0;
  single.seed = 3;
  const FilterOutput one = run_bpf(model, single);
  double acc = 0.0;
  for (int t = 0; t < 8; ++t) acc += model.log_g(t, one.particles[t].col(0));
  CHECK(one.log_z == doctest::Approx(acc).epsilon(1e-12));
}

TEST_CASE("ancestral lineages satisfy the backward recursion") {
  Rng rng(19);
  const HmmModel model = iapf::testing::scalar_lg_model(0, 1, 0.8, 0.5, 1, 1,
                                                        random_observations(rng, 15));
  FilterConfig fc;
  fc.n_particles = 40;
  fc.kappa = 0.7;
  fc.seed = 31;
  fc.record_ancestry = true;
  const FilterOutput out = run_bpf(model, fc);
  CHECK_FALSE(out.resampling_times.empty());
  const Eigen::MatrixXi b = ancestral_lineages(out);
  for (int i = 0; i < fc.n_particles; ++i) {
    CHECK(b(14, i) == i);
    for (int t = 14; t >= 1; --t) CHECK(b(t - 1, i) == out.ancestors[t - 1][b(t, i)]);
  }

  FilterConfig no_anc = fc;
  no_anc.record_ancestry = false;
  CHECK_THROWS_AS(ancestral_lineages(run_bpf(model, no_anc)), std::logic_error);
}

TEST_CASE("smoothing normalization and linearity") {
  Rng rng(23);
  const HmmModel model = iapf::testing::scalar_lg_model(0, 1, 0.8, 0.5, 1, 1,
                                                        random_observations(rng, 12));
  FilterConfig fc;
  fc.n_particles = 200;
  fc.kappa = 0.5;
  fc.seed = 17;
  fc.record_ancestry = true;
  const FilterOutput out = run_bpf(model, fc);

  CHECK(smoothing_expectation(out, [](const Eigen::MatrixXd&) { return 1.0; }) ==
        doctest::Approx(1.0).epsilon(1e-13));

  const auto phi1 = [](const Eigen::MatrixXd& path) { return path(0, 3); };
  const auto phi2 = [](const Eigen::MatrixXd& path) { return path(0, 7) * path(0, 7); };
  const double a = 2.0, bb = -0.75;
  const double combined = smoothing_expectation(
      out, [&](const Eigen::MatrixXd& p) { return a * phi1(p) + bb * phi2(p); });
  CHECK(combined == doctest::Approx(a * smoothing_expectation(out, phi1) +
                                    bb * smoothing_expectation(out, phi2))
                        .epsilon(1e-12));

  CHECK(gamma_estimate(out, [](const Eigen::MatrixXd&) { return 1.0; }) ==
        doctest::Approx(std::exp(out.log_z)).epsilon(1e-12));
}

TEST_CASE("smoothed coordinate means track the kalman smoother") {
  Rng rng(29);
  const int horizon = 10;
  const Observations ys = simulate_linear_gaussian(
      {Eigen::VectorXd::Zero(1), Eigen::MatrixXd::Identity(1, 1),
       Eigen::MatrixXd::Constant(1, 1, 0.8), Eigen::MatrixXd::Constant(1, 1, 0.5),
       Eigen::MatrixXd::Identity(1, 1), Eigen::MatrixXd::Identity(1, 1)},
      horizon, rng);
  const HmmModel model = iapf::testing::scalar_lg_model(0, 1, 0.8, 0.5, 1, 1, ys);
  const KalmanResult kalman = kalman_filter_smoother(model);

  const int replicates = 40;
  Eigen::MatrixXd estimates(replicates, horizon);
  for (int r = 0; r < replicates; ++r) {
    FilterConfig fc;
    fc.n_particles = 500;
    fc.kappa = 0.5;
    fc.seed = mix_seed(555, r);
    fc.record_ancestry = true;
    estimates.row(r) = smoothed_coordinate_means(run_bpf(model, fc)).row(0);
  }
  for (int t = 0; t < horizon; ++t) {
    const double mean = estimates.col(t).mean();
    const double sd = std::sqrt((estimates.col(t).array() - mean).square().sum() /
                                (replicates - 1));
    const double se = sd / std::sqrt(static_cast<double>(replicates));
    CHECK(std::abs(mean - kalman.smoothed_mean[t][0]) < 4.0 * se + 1e-6);
  }
}

TEST_CASE("particle collapse raises with the failing step") {
  Rng rng(37);
  Observations ys = random_observations(rng, 5);
  const Covariance unit = Covariance::diagonal(vec1(1.0));
  TransitionKernel kernel(1, [unit](const Eigen::VectorXd& x) {
    return std::vector<GaussianComponent>{{x, unit, 0.0}};
  });
  auto log_g = [](int t, const Eigen::VectorXd&) {
    return t == 2 ? -std::numeric_limits<double>::infinity() : 0.0;
  };
  const HmmModel model({{vec1(0), unit, 0.0}}, kernel, log_g, std::move(ys));
  FilterConfig fc;
  fc.n_particles = 16;
  fc.seed = 4;
  try {
    run_bpf(model, fc);
    CHECK(false);
  } catch (const ParticleCollapse& e) {
    CHECK(e.step == 2);
  }
}

TEST_CASE("rescaled psi leaves log z and ancestors unchanged under a matched seed") {
  Rng rng(41);
  const int horizon = 12;
  const HmmModel model = iapf::testing::scalar_lg_model(0, 1, 0.8, 0.5, 1, 1,
                                                        random_observations(rng, horizon));
  const auto [psi_star, log_l] = exact_psi_star_lgssm(model);

  // A fitted-style sequence: mix psi* with a constant so weights vary.
  std::vector<PsiFunction> mixed;
  for (int t = 0; t < horizon; ++t) {
    const auto& comp = psi_star[t].components().at(0);
    mixed.push_back(PsiFunction(1, 0.05, {GaussianComponent{comp.mean, comp.cov, 0.0}}));
  }
  const PsiSequence psi(mixed);
  std::vector<double> factors;
  for (int t = 0; t < horizon; ++t) factors.push_back(8.0 * rng.normal());

  FilterConfig fc;
  fc.n_particles = 128;
  fc.kappa = 0.5;
  fc.seed = 20240;
  fc.record_ancestry = true;
  const FilterOutput a = run_psi_apf(model, psi, fc);
  const FilterOutput b = run_psi_apf(model, psi.rescaled(factors), fc);
  CHECK(std::abs(a.log_z - b.log_z) < 1e-10);
  CHECK(a.resampling_times == b.resampling_times);
  REQUIRE(a.ancestors.size() == b.ancestors.size());
  for (std::size_t t = 0; t < a.ancestors.size(); ++t) CHECK(a.ancestors[t] == b.ancestors[t]);
}

TEST_CASE("the optimal twist never triggers adaptive resampling") {
  Rng rng(43);
  const HmmModel model = iapf::testing::scalar_lg_model(0.1, 1, 0.7, 0.6, 1, 0.8,
                                                        random_observations(rng, 25));
  const auto [psi_star, log_l] = exact_psi_star_lgssm(model);
  FilterConfig fc;
  fc.n_particles = 10;
  fc.kappa = 0.5;
  fc.seed = 77;
  const FilterOutput out = run_psi_apf(model, psi_star, fc);
  CHECK(out.resampling_times.empty());
  CHECK(std::abs(out.log_z - kalman_log_likelihood(model)) < 1e-6);
  // ESS stays at N for every step's weights.
  for (int t = 0; t < 25; ++t)
    CHECK(ess(WeightVector(out.log_weights[t])) ==
          doctest::Approx(fc.n_particles).epsilon(1e-9));
}

TEST_CASE("filter summary json stable form drops the wall time") {
  Rng rng(47);
  const HmmModel model = iapf::testing::scalar_lg_model(0, 1, 0.8, 0.5, 1, 1,
                                                        random_observations(rng, 4));
  FilterConfig fc;
  fc.n_particles = 8;
  fc.seed = 123;
  const FilterOutput out = run_bpf(model, fc);
  const std::string stable = filter_summary_json(out, "bpf", true);
  CHECK(stable.find("wall_time_ms") == std::string::npos);
  CHECK(stable.find("\"estimator\":\"bpf\"") != std::string::npos);
  CHECK(filter_summary_json(out, "bpf", false).find("wall_time_ms") != std::string::npos);
}
