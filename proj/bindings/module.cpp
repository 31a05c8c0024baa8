#include <pybind11/eigen.h>
#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "iapf/grid.hpp"
#include "iapf/iapf.hpp"
#include "iapf/kalman.hpp"
#include "iapf/pmmh.hpp"

namespace py = pybind11;
using namespace iapf;

PYBIND11_MODULE(_core, m) {
  m.doc() = "Twisted particle filters, the iterated APF and exact oracles";

  py::register_exception<ParticleCollapse>(m, "ParticleCollapseError");
  py::register_exception<UnrepresentablePsi>(m, "UnrepresentablePsiError");

  py::class_<Observations>(m, "Observations")
      .def(py::init<Eigen::MatrixXd>(), py::arg("rows"))
      .def_property_readonly("horizon", &Observations::horizon)
      .def_property_readonly("dim", &Observations::dim)
      .def("matrix", &Observations::matrix);
  m.def("load_observations_csv", &load_observations_csv, py::arg("path"));
  m.def("mean_corrected_log_returns", &mean_corrected_log_returns, py::arg("prices"),
        py::arg("scale") = 1.0);

  py::class_<HmmModel>(m, "HmmModel")
      .def_property_readonly("dim_state", &HmmModel::dim_state)
      .def_property_readonly("dim_obs", &HmmModel::dim_obs)
      .def_property_readonly("horizon", &HmmModel::horizon)
      .def_property_readonly("is_linear_gaussian", &HmmModel::is_linear_gaussian)
      .def("log_g", &HmmModel::log_g, py::arg("t"), py::arg("x"))
      .def("log_initial_density", &HmmModel::log_initial_density, py::arg("x"));

  m.def("build_linear_gaussian", &build_linear_gaussian, py::arg("m"), py::arg("Sigma"),
        py::arg("A"), py::arg("B"), py::arg("C"), py::arg("D"), py::arg("observations"));
  m.def("build_univariate_sv", &build_univariate_sv, py::arg("alpha"), py::arg("sigma"),
        py::arg("beta"), py::arg("observations"));
  m.def("build_univariate_sv_stationary", &build_univariate_sv_stationary, py::arg("alpha"),
        py::arg("sigma"), py::arg("beta"), py::arg("observations"));
  m.def("build_multivariate_sv", &build_multivariate_sv, py::arg("m"), py::arg("phi"),
        py::arg("U"), py::arg("observations"));
  m.def("msv_stationary_covariance", &msv_stationary_covariance, py::arg("phi"), py::arg("U"));
  m.def("alpha_power_matrix", &alpha_power_matrix, py::arg("d"), py::arg("alpha"));

  m.def(
      "simulate_linear_gaussian",
      [](const Eigen::VectorXd& mean, const Eigen::MatrixXd& Sigma, const Eigen::MatrixXd& A,
         const Eigen::MatrixXd& B, const Eigen::MatrixXd& C, const Eigen::MatrixXd& D,
         int horizon, std::uint64_t seed) {
        Rng rng(seed);
        return simulate_linear_gaussian({mean, Sigma, A, B, C, D}, horizon, rng);
      },
      py::arg("m"), py::arg("Sigma"), py::arg("A"), py::arg("B"), py::arg("C"), py::arg("D"),
      py::arg("horizon"), py::arg("seed"));
  m.def(
      "simulate_univariate_sv",
      [](double alpha, double sigma, double beta, int horizon, std::uint64_t seed) {
        Rng rng(seed);
        return simulate_univariate_sv(alpha, sigma, beta, horizon, rng);
      },
      py::arg("alpha"), py::arg("sigma"), py::arg("beta"), py::arg("horizon"), py::arg("seed"));
  m.def(
      "simulate_multivariate_sv",
      [](const Eigen::VectorXd& mean, const Eigen::VectorXd& phi, const Eigen::MatrixXd& U,
         int horizon, std::uint64_t seed) {
        Rng rng(seed);
        return simulate_multivariate_sv(mean, phi, U, horizon, rng);
      },
      py::arg("m"), py::arg("phi"), py::arg("U"), py::arg("horizon"), py::arg("seed"));

  py::class_<PsiSequence>(m, "PsiSequence")
      .def_static("all_constant", &PsiSequence::all_constant, py::arg("horizon"), py::arg("dim"),
                  py::arg("value") = 1.0)
      .def_property_readonly("size", &PsiSequence::size)
      .def_property_readonly("dim", &PsiSequence::dim)
      .def("eval_log",
           [](const PsiSequence& seq, int t, const Eigen::VectorXd& x) {
             return psi_eval_log(seq[t], x);
           })
      .def("rescaled", &PsiSequence::rescaled, py::arg("log_factors"))
      .def("to_json", &PsiSequence::to_json)
      .def_static("from_json", &PsiSequence::from_json, py::arg("text"));

  m.def(
      "exact_psi_star_lgssm",
      [](const HmmModel& model) {
        PsiStarResult res = exact_psi_star_lgssm(model);
        return py::make_tuple(std::move(res.psi), res.log_psi_tilde0);
      },
      py::arg("model"));
  m.def("fully_adapted_psi", &fully_adapted_psi, py::arg("model"));
  m.def("integrand_log_ratio", &integrand_log_ratio, py::arg("model"), py::arg("psi"),
        py::arg("path"));

  py::class_<FilterOutput>(m, "FilterOutput")
      .def_readonly("particles", &FilterOutput::particles)
      .def_readonly("log_weights", &FilterOutput::log_weights)
      .def_readonly("ancestors", &FilterOutput::ancestors)
      .def_readonly("resampling_times", &FilterOutput::resampling_times)
      .def_readonly("per_step_log_means", &FilterOutput::per_step_log_means)
      .def_readonly("log_z", &FilterOutput::log_z)
      .def_readonly("n_particles", &FilterOutput::n_particles)
      .def_readonly("kappa", &FilterOutput::kappa)
      .def_readonly("seed", &FilterOutput::seed)
      .def_property_readonly("resampling_count", &FilterOutput::resampling_count);

  const auto make_filter_config = [](int n, double kappa, std::uint64_t seed, bool ancestry) {
    FilterConfig fc;
    fc.n_particles = n;
    fc.kappa = kappa;
    fc.seed = seed;
    fc.record_ancestry = ancestry;
    return fc;
  };
  m.def(
      "run_bpf",
      [make_filter_config](const HmmModel& model, int n, double kappa, std::uint64_t seed,
                           bool record_ancestry) {
        return run_bpf(model, make_filter_config(n, kappa, seed, record_ancestry));
      },
      py::arg("model"), py::arg("n"), py::arg("kappa") = 0.5, py::arg("seed") = 0,
      py::arg("record_ancestry") = false);
  m.def(
      "run_psi_apf",
      [make_filter_config](const HmmModel& model, const PsiSequence& psi, int n, double kappa,
                           std::uint64_t seed, bool record_ancestry) {
        return run_psi_apf(model, psi, make_filter_config(n, kappa, seed, record_ancestry));
      },
      py::arg("model"), py::arg("psi"), py::arg("n"), py::arg("kappa") = 0.5,
      py::arg("seed") = 0, py::arg("record_ancestry") = false);

  m.def("ancestral_lineages", &ancestral_lineages, py::arg("filter_output"));
  m.def("smoothing_expectation", &smoothing_expectation, py::arg("filter_output"),
        py::arg("phi"));
  m.def("smoothed_coordinate_means", &smoothed_coordinate_means, py::arg("filter_output"));
  m.def(
      "ess",
      [](const Eigen::VectorXd& log_weights) { return ess(WeightVector(log_weights)); },
      py::arg("log_weights"));

  py::class_<IapfIterationRecord>(m, "IapfIterationRecord")
      .def_readonly("l", &IapfIterationRecord::l)
      .def_readonly("n_particles", &IapfIterationRecord::n_particles)
      .def_readonly("log_z", &IapfIterationRecord::log_z)
      .def_readonly("resampling_count", &IapfIterationRecord::resampling_count)
      .def_readonly("final_run", &IapfIterationRecord::final_run);

  py::class_<IapfResult>(m, "IapfResult")
      .def_readonly("log_z", &IapfResult::log_z)
      .def_readonly("psi", &IapfResult::psi)
      .def_readonly("n_final", &IapfResult::n_final)
      .def_property_readonly("iterations",
                             [](const IapfResult& r) { return r.trace.iterations; })
      .def_property_readonly("termination",
                             [](const IapfResult& r) { return r.trace.termination; });

  m.def(
      "run_iapf",
      [](const HmmModel& model, int n0, int k, double tau, double kappa, std::uint64_t seed,
         int n_max, int l_max) {
        IapfConfig cfg;
        cfg.n0 = n0;
        cfg.k = k;
        cfg.tau = tau;
        cfg.kappa = kappa;
        cfg.seed = seed;
        cfg.n_max = n_max;
        cfg.l_max = l_max;
        return run_iapf(model, cfg);
      },
      py::arg("model"), py::arg("n0") = 1000, py::arg("k") = 3, py::arg("tau") = 0.5,
      py::arg("kappa") = 0.5, py::arg("seed") = 0, py::arg("n_max") = (1 << 22),
      py::arg("l_max") = 100);

  py::class_<KalmanResult>(m, "KalmanResult")
      .def_readonly("log_likelihood", &KalmanResult::log_likelihood)
      .def_readonly("predictive_mean", &KalmanResult::predictive_mean)
      .def_readonly("predictive_cov", &KalmanResult::predictive_cov)
      .def_readonly("filtered_mean", &KalmanResult::filtered_mean)
      .def_readonly("filtered_cov", &KalmanResult::filtered_cov)
      .def_readonly("smoothed_mean", &KalmanResult::smoothed_mean)
      .def_readonly("smoothed_cov", &KalmanResult::smoothed_cov);
  m.def("kalman_filter_smoother", &kalman_filter_smoother, py::arg("model"));
  m.def("kalman_log_likelihood", &kalman_log_likelihood, py::arg("model"));

  py::class_<Grid1D>(m, "Grid1D")
      .def(py::init<double, double, int>(), py::arg("lo"), py::arg("hi"), py::arg("n_nodes"))
      .def_readonly("lo", &Grid1D::lo)
      .def_readonly("hi", &Grid1D::hi)
      .def_readonly("n_nodes", &Grid1D::n_nodes)
      .def("nodes", &Grid1D::nodes)
      .def("weights", &Grid1D::weights);
  m.def("default_grid_for", &default_grid_for, py::arg("model"), py::arg("n_nodes") = 2048);
  m.def("grid_log_likelihood_1d", &grid_log_likelihood_1d, py::arg("model"), py::arg("grid"));
  m.def(
      "grid_backward_psi_star_1d",
      [](const HmmModel& model, const Grid1D& grid) {
        GridPsiStar res = grid_backward_psi_star_1d(model, grid);
        return py::make_tuple(std::move(res.log_values), res.log_psi_tilde0);
      },
      py::arg("model"), py::arg("grid"));
  m.def(
      "grid_asymptotic_variance_1d",
      [](const HmmModel& model, const PsiSequence& psi, const Grid1D& grid) {
        GridVariance v = grid_asymptotic_variance_1d(model, psi, grid);
        return py::make_tuple(v.value, v.chi_square_form);
      },
      py::arg("model"), py::arg("psi"), py::arg("grid"));
  m.def("grid_bpf_asymptotic_variance_1d", &grid_bpf_asymptotic_variance_1d, py::arg("model"),
        py::arg("grid"));

  py::class_<Prior>(m, "Prior")
      .def_static("uniform", &Prior::uniform, py::arg("a"), py::arg("b"))
      .def_static("inverse_gamma", &Prior::inverse_gamma, py::arg("shape"), py::arg("scale"))
      .def_static("inverse_gamma_on_square", &Prior::inverse_gamma_on_square, py::arg("shape"),
                  py::arg("scale"))
      .def_static("beta", &Prior::beta, py::arg("a"), py::arg("b"))
      .def_static("symmetric_triangular", &Prior::symmetric_triangular)
      .def_static("improper_flat", &Prior::improper_flat)
      .def("log_density", &Prior::log_density, py::arg("x"));

  py::class_<Chain>(m, "Chain")
      .def_readonly("samples", &Chain::samples)
      .def_readonly("log_z_trace", &Chain::log_z_trace)
      .def_readonly("estimator_calls", &Chain::estimator_calls)
      .def_readonly("estimator_failures", &Chain::estimator_failures)
      .def("acceptance_rate", &Chain::acceptance_rate, py::arg("component"));

  m.def(
      "run_pmmh",
      [](const std::function<HmmModel(const Eigen::VectorXd&)>& builder,
         const std::vector<Prior>& priors, const Eigen::VectorXd& theta0, int chain_length,
         const Eigen::VectorXd& proposal_sd, const std::string& estimator, int n,
         double kappa, int iapf_n0, std::uint64_t seed) {
        MhConfig config;
        config.chain_length = chain_length;
        config.proposal_sd = proposal_sd;
        config.seed = seed;
        if (estimator == "kalman") {
          config.estimator.kind = EstimatorSpec::Kind::kKalman;
        } else if (estimator == "bpf") {
          config.estimator.kind = EstimatorSpec::Kind::kBpf;
          config.estimator.n_particles = n;
          config.estimator.kappa = kappa;
        } else if (estimator == "iapf") {
          config.estimator.kind = EstimatorSpec::Kind::kIapf;
          config.estimator.iapf.n0 = iapf_n0;
          config.estimator.iapf.kappa = kappa;
        } else {
          throw std::invalid_argument("estimator must be kalman, bpf or iapf");
        }
        return run_pmmh(builder, priors, theta0, config);
      },
      py::arg("builder"), py::arg("priors"), py::arg("theta0"), py::arg("chain_length"),
      py::arg("proposal_sd"), py::arg("estimator") = "kalman", py::arg("n") = 1000,
      py::arg("kappa") = 0.5, py::arg("iapf_n0") = 100, py::arg("seed") = 0);

  m.def("iact", &iact, py::arg("samples"));
  m.def("adjusted_sample_size", &adjusted_sample_size, py::arg("samples"));
  m.def("mix_seed", &mix_seed, py::arg("base"), py::arg("id"));
}
