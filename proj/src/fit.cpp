#include "iapf/fit.hpp"

#include <cmath>
#include <limits>

namespace iapf {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;
constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// One parameterization of the fitted Gaussian's log density. values(theta)
// returns log N(xi_i; .) at the support points; the free overall scale is
// profiled out of the objective separately.
struct GaussianParam {
  int n_params = 0;
  std::function<Eigen::VectorXd(const Eigen::VectorXd&)> log_values;
  // N x P Jacobian of the log values; null means forward finite differences.
  std::function<Eigen::MatrixXd(const Eigen::VectorXd&, const Eigen::VectorXd&)> jacobian;
};

GaussianParam diagonal_param(const Eigen::MatrixXd& xi) {
  const int d = static_cast<int>(xi.rows());
  const int n = static_cast<int>(xi.cols());
  GaussianParam param;
  param.n_params = 2 * d;
  param.log_values = [&xi, d, n](const Eigen::VectorXd& theta) {
    const Eigen::VectorXd m = theta.head(d);
    const Eigen::VectorXd u = theta.tail(d).cwiseMax(-700.0).cwiseMin(700.0);
    const double base = -0.5 * (d * kLog2Pi + u.sum());
    const Eigen::VectorXd inv_var = (-u.array()).exp();
    Eigen::VectorXd out(n);
    for (int i = 0; i < n; ++i) {
      const Eigen::VectorXd r = xi.col(i) - m;
      out[i] = base - 0.5 * (r.array().square() * inv_var.array()).sum();
    }
    return out;
  };
  param.jacobian = [&xi, d, n](const Eigen::VectorXd& theta, const Eigen::VectorXd&) {
    const Eigen::VectorXd m = theta.head(d);
    const Eigen::VectorXd u = theta.tail(d).cwiseMax(-700.0).cwiseMin(700.0);
    const Eigen::VectorXd inv_var = (-u.array()).exp();
    Eigen::MatrixXd jac(n, 2 * d);
    for (int i = 0; i < n; ++i) {
      const Eigen::VectorXd r = xi.col(i) - m;
      jac.row(i).head(d) = (r.array() * inv_var.array()).transpose();
      jac.row(i).tail(d) = (-0.5 + 0.5 * r.array().square() * inv_var.array()).transpose();
    }
    return jac;
  };
  return param;
}

// theta = (m, log diag L, strict lower of L) with Sigma = L L'.
GaussianParam dense_param(const Eigen::MatrixXd& xi) {
  const int d = static_cast<int>(xi.rows());
  const int n = static_cast<int>(xi.cols());
  GaussianParam param;
  param.n_params = d + d * (d + 1) / 2;
  param.log_values = [&xi, d, n](const Eigen::VectorXd& theta) {
    const Eigen::VectorXd m = theta.head(d);
    Eigen::MatrixXd chol = Eigen::MatrixXd::Zero(d, d);
    int pos = d;
    for (int j = 0; j < d; ++j)
      chol(j, j) = std::exp(std::clamp(theta[pos++], -350.0, 350.0));
    for (int r = 1; r < d; ++r)
      for (int c = 0; c < r; ++c) chol(r, c) = theta[pos++];
    const double base = -0.5 * d * kLog2Pi - chol.diagonal().array().log().sum();
    Eigen::VectorXd out(n);
    for (int i = 0; i < n; ++i) {
      const Eigen::VectorXd w = chol.triangularView<Eigen::Lower>().solve(xi.col(i) - m);
      out[i] = base - 0.5 * w.squaredNorm();
    }
    return out;
  };
  return param;
}

Eigen::MatrixXd numeric_jacobian(const GaussianParam& param, const Eigen::VectorXd& theta,
                                 const Eigen::VectorXd& log_values) {
  Eigen::MatrixXd jac(log_values.size(), param.n_params);
  for (int p = 0; p < param.n_params; ++p) {
    const double eps = 1e-7 * (1.0 + std::abs(theta[p]));
    Eigen::VectorXd shifted = theta;
    shifted[p] += eps;
    jac.col(p) = (param.log_values(shifted) - log_values) / eps;
  }
  return jac;
}

// Weighted SSE of the log residuals with the additive shift profiled:
//   min_s sum_i w_i (log_values_i + s - log_t_i)^2.
double log_objective(const Eigen::VectorXd& log_values, const Eigen::VectorXd& log_t,
                     const Eigen::VectorXd& weights, double total_weight, double* shift_out) {
  const double shift = weights.dot(log_t - log_values) / total_weight;
  if (shift_out) *shift_out = shift;
  const Eigen::VectorXd r = log_values.array() + shift - log_t.array();
  return r.cwiseProduct(r).dot(weights);
}

struct LmResult {
  Eigen::VectorXd theta;
  double objective = 0.0;
};

// Damped Gauss-Newton on the shift-profiled weighted log residuals; only
// improving steps are accepted, so the objective trace never increases.
LmResult levenberg_marquardt(const GaussianParam& param, const Eigen::VectorXd& theta0,
                             const Eigen::VectorXd& log_t, const Eigen::VectorXd& weights,
                             const FitConfig& config, FitDiagnostics& diag) {
  const double total_weight = weights.sum();
  LmResult best;
  best.theta = theta0;
  Eigen::VectorXd log_values = param.log_values(best.theta);
  double shift = 0.0;
  best.objective = log_objective(log_values, log_t, weights, total_weight, &shift);
  diag.objectives.push_back(best.objective);

  double damping = 1e-3;
  for (int iter = 0; iter < config.max_gauss_newton_iters; ++iter) {
    Eigen::MatrixXd jac = param.jacobian ? param.jacobian(best.theta, log_values)
                                         : numeric_jacobian(param, best.theta, log_values);
    // The profiled shift removes the weighted column mean of the Jacobian.
    const Eigen::RowVectorXd col_mean = (weights.transpose() * jac) / total_weight;
    jac.rowwise() -= col_mean;
    const Eigen::VectorXd residual =
        (log_values.array() + shift - log_t.array()).matrix();
    const Eigen::VectorXd wr = weights.cwiseProduct(residual);
    const Eigen::VectorXd gradient = jac.transpose() * wr;
    const Eigen::MatrixXd normal = jac.transpose() * weights.asDiagonal() * jac;

    bool improved = false;
    for (int attempt = 0; attempt < 8 && !improved; ++attempt) {
      Eigen::MatrixXd lhs = normal;
      lhs.diagonal() += damping * normal.diagonal().cwiseMax(1e-300);
      const Eigen::VectorXd delta = lhs.ldlt().solve(-gradient);
      if (!delta.allFinite()) {
        damping *= 10.0;
        continue;
      }
      const Eigen::VectorXd trial_theta = best.theta + delta;
      const Eigen::VectorXd trial_values = param.log_values(trial_theta);
      double trial_shift = 0.0;
      const double trial_objective =
          log_objective(trial_values, log_t, weights, total_weight, &trial_shift);
      if (trial_objective < best.objective) {
        const bool converged =
            delta.norm() < config.param_tolerance * (1.0 + best.theta.norm());
        best.theta = trial_theta;
        log_values = trial_values;
        shift = trial_shift;
        best.objective = trial_objective;
        diag.objectives.push_back(best.objective);
        damping = std::max(damping / 3.0, 1e-12);
        improved = true;
        if (converged) return best;
      } else {
        damping *= 10.0;
      }
    }
    if (!improved) break;
  }
  return best;
}

// Closed-form weighted quadratic regression of the log targets,
//   log t ~ sum_j a_j x_j^2 + b_j x_j + c   (diagonal)
// with curvature clipped into a spread-aware range. Exact when the targets
// are a scaled Gaussian with diagonal covariance.
void quad_regression_diagonal(const Eigen::MatrixXd& xi, const Eigen::VectorXd& log_t,
                              const Eigen::VectorXd& weights, Eigen::VectorXd& mean,
                              Eigen::VectorXd& var) {
  const int d = static_cast<int>(xi.rows());
  const int n = static_cast<int>(xi.cols());
  Eigen::MatrixXd design(n, 2 * d + 1);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < d; ++j) {
      design(i, j) = xi(j, i) * xi(j, i);
      design(i, d + j) = xi(j, i);
    }
    design(i, 2 * d) = 1.0;
  }
  const Eigen::MatrixXd normal = design.transpose() * weights.asDiagonal() * design;
  const Eigen::VectorXd rhs = design.transpose() * weights.cwiseProduct(log_t);
  const Eigen::VectorXd coef = normal.ldlt().solve(rhs);
  mean.resize(d);
  var.resize(d);
  for (int j = 0; j < d; ++j) {
    const double lo = xi.row(j).minCoeff(), hi = xi.row(j).maxCoeff();
    const double spread = hi - lo;
    const double cap = 100.0 * (spread * spread + 1.0);
    const double curvature = coef[j];
    double v = curvature < 0.0 ? -0.5 / curvature : cap;
    var[j] = std::min(std::max(v, 1e-12), cap);
    // The support points are the only evidence; a center far outside them
    // is extrapolation noise and can throw twisted proposals into
    // unevaluable state regions.
    mean[j] = std::clamp(coef[d + j] * var[j], lo - 3.0 * (spread + 1.0),
                         hi + 3.0 * (spread + 1.0));
  }
}

// Dense analogue with cross terms; the precision -2 Q is clipped to be
// positive definite through its eigendecomposition.
void quad_regression_dense(const Eigen::MatrixXd& xi, const Eigen::VectorXd& log_t,
                           const Eigen::VectorXd& weights, Eigen::VectorXd& mean,
                           Eigen::MatrixXd& cov) {
  const int d = static_cast<int>(xi.rows());
  const int n = static_cast<int>(xi.cols());
  const int nq = d * (d + 1) / 2;
  Eigen::MatrixXd design(n, nq + d + 1);
  for (int i = 0; i < n; ++i) {
    int pos = 0;
    for (int r = 0; r < d; ++r)
      for (int c = r; c < d; ++c)
        design(i, pos++) = (r == c ? 1.0 : 2.0) * xi(r, i) * xi(c, i);
    for (int j = 0; j < d; ++j) design(i, nq + j) = xi(j, i);
    design(i, nq + d) = 1.0;
  }
  const Eigen::MatrixXd normal = design.transpose() * weights.asDiagonal() * design;
  const Eigen::VectorXd rhs = design.transpose() * weights.cwiseProduct(log_t);
  const Eigen::VectorXd coef = normal.ldlt().solve(rhs);

  Eigen::MatrixXd q(d, d);
  int pos = 0;
  for (int r = 0; r < d; ++r)
    for (int c = r; c < d; ++c) {
      q(r, c) = coef[pos];
      q(c, r) = coef[pos];
      ++pos;
    }
  const Eigen::VectorXd b = coef.segment(nq, d);

  double max_spread_sq = 1.0;
  for (int j = 0; j < d; ++j) {
    const double spread = xi.row(j).maxCoeff() - xi.row(j).minCoeff();
    max_spread_sq = std::max(max_spread_sq, spread * spread);
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(-2.0 * q);  // precision
  const double min_precision = 1.0 / (100.0 * max_spread_sq);
  const Eigen::VectorXd clipped =
      es.eigenvalues().cwiseMax(min_precision).cwiseMin(1e12);
  const Eigen::MatrixXd precision =
      es.eigenvectors() * clipped.asDiagonal() * es.eigenvectors().transpose();
  Eigen::MatrixXd cov_raw =
      es.eigenvectors() * clipped.cwiseInverse().asDiagonal() * es.eigenvectors().transpose();
  cov = 0.5 * (cov_raw + cov_raw.transpose());
  mean = precision.ldlt().solve(b);
  for (int j = 0; j < d; ++j) {
    const double lo = xi.row(j).minCoeff(), hi = xi.row(j).maxCoeff();
    const double spread = hi - lo;
    mean[j] = std::clamp(mean[j], lo - 3.0 * (spread + 1.0), hi + 3.0 * (spread + 1.0));
  }
}

}  // namespace

double profile_lambda(const Eigen::VectorXd& gaussian_values, const Eigen::VectorXd& targets) {
  const double denom = targets.squaredNorm();
  if (denom == 0.0) return 0.0;
  return gaussian_values.dot(targets) / denom;
}

PsiFunction fit_psi(const FitProblem& problem, int n_for_regularizer, const FitConfig& config,
                    FitDiagnostics* diagnostics) {
  const int d = static_cast<int>(problem.support.rows());
  const int n = static_cast<int>(problem.support.cols());
  if (n < d + 2) throw std::invalid_argument("fit: need at least d + 2 support points");
  if (problem.log_targets.size() != n)
    throw std::invalid_argument("fit: targets and support points disagree");
  if (config.max_gauss_newton_iters < 1 || !(config.param_tolerance > 0.0))
    throw std::invalid_argument("fit: invalid optimizer configuration");
  if (n_for_regularizer < 1) throw std::invalid_argument("fit: regularizer count must be >= 1");

  FitDiagnostics local;
  FitDiagnostics& diag = diagnostics ? *diagnostics : local;
  diag = FitDiagnostics{};

  // Points with vanished targets carry no log-domain information; drop them.
  std::vector<int> keep;
  keep.reserve(n);
  for (int i = 0; i < n; ++i)
    if (std::isfinite(problem.log_targets[i])) keep.push_back(i);
  Eigen::MatrixXd xi(d, keep.size());
  Eigen::VectorXd log_t(keep.size());
  for (std::size_t k = 0; k < keep.size(); ++k) {
    xi.col(static_cast<int>(k)) = problem.support.col(keep[k]);
    log_t[static_cast<int>(k)] = problem.log_targets[keep[k]];
  }
  const int n_fit = static_cast<int>(keep.size());

  const auto moment_matched = [&](const Eigen::MatrixXd& pts) {
    const int count = static_cast<int>(pts.cols());
    Eigen::VectorXd m = pts.rowwise().mean();
    Eigen::VectorXd var = Eigen::VectorXd::Zero(d);
    for (int i = 0; i < count; ++i) var += (pts.col(i) - m).array().square().matrix();
    var /= count;
    for (int j = 0; j < d; ++j)
      if (!(var[j] > 1e-300)) var[j] = 1.0;
    return std::pair<Eigen::VectorXd, Eigen::VectorXd>(std::move(m), std::move(var));
  };

  const auto make_psi = [&](const Eigen::VectorXd& m, const Covariance& cov) {
    double log_c;
    switch (config.regularizer) {
      case FitConfig::Regularizer::kFixed:
        if (!(config.fixed_value > 0.0))
          throw std::invalid_argument("fit: fixed regularizer must be positive");
        log_c = std::log(config.fixed_value);
        break;
      case FitConfig::Regularizer::kPeakOverN:
        log_c = -0.5 * (d * kLog2Pi + cov.log_det()) -
                std::log(static_cast<double>(n_for_regularizer));
        break;
      default:  // transition calibration happens in the backward sweep
        log_c = -0.5 * (d * kLog2Pi + cov.log_det()) -
                2.0 * std::log(static_cast<double>(n_for_regularizer));
        break;
    }
    std::vector<GaussianComponent> comps{{m, cov, 0.0}};
    return PsiFunction::from_log_constant(d, log_c, std::move(comps), 0.0);
  };

  // Degenerate targets: flat (or entirely vanished) target vectors reduce
  // to the moment match over the raw support, the level absorbed by the
  // scale-free lambda.
  const double spread =
      n_fit > 0 ? log_t.maxCoeff() - log_t.minCoeff() : 0.0;
  if (n_fit < d + 2 || spread < 1e-12) {
    diag.degenerate_targets = true;
    diag.lambda = n_fit > 0 ? 1.0 : 0.0;
    auto [m, var] = moment_matched(problem.support);
    diag.objectives.push_back(0.0);
    return make_psi(m, Covariance::diagonal(var));
  }

  const Eigen::VectorXd weights = Eigen::VectorXd::Ones(n_fit);

  const GaussianParam param = config.diagonal_only ? diagonal_param(xi) : dense_param(xi);
  Eigen::VectorXd theta0(param.n_params);
  if (config.diagonal_only) {
    Eigen::VectorXd m0, var0;
    quad_regression_diagonal(xi, log_t, weights, m0, var0);
    theta0 << m0, var0.array().log().matrix();
  } else {
    Eigen::VectorXd m0;
    Eigen::MatrixXd cov0;
    quad_regression_dense(xi, log_t, weights, m0, cov0);
    const Eigen::MatrixXd chol = Eigen::LLT<Eigen::MatrixXd>(cov0).matrixL();
    theta0.head(d) = m0;
    int pos = d;
    for (int j = 0; j < d; ++j) theta0[pos++] = std::log(chol(j, j));
    for (int r = 1; r < d; ++r)
      for (int c = 0; c < r; ++c) theta0[pos++] = chol(r, c);
  }

  const double init_objective = [&] {
    return log_objective(param.log_values(theta0), log_t, weights, weights.sum(), nullptr);
  }();
  LmResult result = levenberg_marquardt(param, theta0, log_t, weights, config, diag);
  if (!(result.objective <= init_objective)) {
    diag.fallback_used = true;
    result.theta = theta0;
  }

  Eigen::VectorXd m = result.theta.head(d);
  for (int j = 0; j < d; ++j) {
    const double lo = xi.row(j).minCoeff(), hi = xi.row(j).maxCoeff();
    const double spread = hi - lo;
    m[j] = std::clamp(m[j], lo - 3.0 * (spread + 1.0), hi + 3.0 * (spread + 1.0));
  }
  Covariance cov = Covariance::identity(d);
  if (config.diagonal_only) {
    cov = Covariance::diagonal(
        result.theta.tail(d).cwiseMax(-700.0).cwiseMin(700.0).array().exp());
  } else {
    Eigen::MatrixXd chol = Eigen::MatrixXd::Zero(d, d);
    int pos = d;
    for (int j = 0; j < d; ++j)
      chol(j, j) = std::exp(std::clamp(result.theta[pos++], -350.0, 350.0));
    for (int r = 1; r < d; ++r)
      for (int c = 0; c < r; ++c) chol(r, c) = result.theta[pos++];
    cov = Covariance::dense(chol * chol.transpose());
  }

  // Report the scale in the printed convention N ~ lambda t.
  const double target_shift = log_t.maxCoeff();
  const Eigen::VectorXd lin_values = param.log_values(result.theta).array().exp();
  diag.lambda = profile_lambda(lin_values, (log_t.array() - target_shift).exp());
  return make_psi(m, cov);
}

Eigen::VectorXd backward_targets(const HmmModel& model, int t, const Eigen::MatrixXd& particles,
                                 const PsiFunction* psi_next) {
  if (particles.rows() != model.dim_state())
    throw std::invalid_argument("backward_targets: particle dimension mismatch");
  const int n = static_cast<int>(particles.cols());
  Eigen::VectorXd out(n);
  for (int i = 0; i < n; ++i) {
    const Eigen::VectorXd x = particles.col(i);
    double v = model.log_g(t, x);
    if (psi_next) v += log_transition_apply_psi(model, x, *psi_next);
    out[i] = v;
  }
  return out;
}

namespace {

// Floor calibration for the backward sweep: the constant gets 1/N of the
// geometric-mean transition mass of the fitted Gaussian when entering this
// step, so its share of the twisted mixture stays O(1/N) for typical
// states regardless of dimension.
PsiFunction calibrate_floor(const HmmModel& model, const Eigen::MatrixXd* prev_particles,
                            const PsiFunction& fitted, int n_particles) {
  const auto& comp = fitted.components().at(0);
  const PsiFunction bare = PsiFunction::from_log_constant(
      fitted.dim(), kNegInf, {GaussianComponent{comp.mean, comp.cov, 0.0}}, 0.0);
  double log_mass = 0.0;
  if (prev_particles) {
    for (int i = 0; i < prev_particles->cols(); ++i)
      log_mass += log_transition_apply_psi(model, prev_particles->col(i), bare);
    log_mass /= prev_particles->cols();
  } else {
    Eigen::VectorXd terms(model.initial().size());
    for (std::size_t k = 0; k < model.initial().size(); ++k)
      terms[static_cast<int>(k)] =
          model.initial()[k].log_weight + log_component_psi_integral(model.initial()[k], bare);
    log_mass = log_sum_exp(terms);
  }
  const double log_c = log_mass - std::log(static_cast<double>(n_particles));
  return PsiFunction::from_log_constant(
      fitted.dim(), log_c, {GaussianComponent{comp.mean, comp.cov, 0.0}}, 0.0);
}

}  // namespace

PsiSequence approximate_psi_sequence(const HmmModel& model, const FilterOutput& out,
                                     const FitConfig& config) {
  const int horizon = model.horizon();
  if (static_cast<int>(out.particles.size()) != horizon)
    throw std::invalid_argument("psi approximation: filter output horizon mismatch");
  std::vector<PsiFunction> psis(static_cast<std::size_t>(horizon),
                                PsiFunction::one(model.dim_state()));
  const PsiFunction* next = nullptr;
  for (int t = horizon - 1; t >= 0; --t) {
    FitProblem problem{out.particles[t], backward_targets(model, t, out.particles[t], next)};
    try {
      psis[t] = fit_psi(problem, out.n_particles, config);
      if (config.regularizer == FitConfig::Regularizer::kTransitionCalibrated)
        psis[t] = calibrate_floor(model, t > 0 ? &out.particles[t - 1] : nullptr, psis[t],
                                  out.n_particles);
    } catch (const std::exception& e) {
      throw std::runtime_error("psi fit failed at step " + std::to_string(t) + ": " + e.what());
    }
    next = &psis[t];
  }
  return PsiSequence(psis);
}

}  // namespace iapf
