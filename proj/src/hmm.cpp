#include "iapf/hmm.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace iapf {

namespace {
constexpr double kLog2Pi = 1.8378770664093454836;
}

Observations::Observations(Eigen::MatrixXd rows) : rows_(std::move(rows)) {
  if (rows_.rows() < 1 || rows_.cols() < 1)
    throw std::invalid_argument("observations: need at least one row and one column");
  if (!rows_.allFinite()) throw std::invalid_argument("observations: entries must be finite");
}

Observations load_observations_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open observations file: " + path);
  std::vector<std::vector<double>> rows;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (line.empty() || line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    bool numeric = true;
    while (std::getline(ss, cell, ',')) {
      try {
        std::size_t pos = 0;
        row.push_back(std::stod(cell, &pos));
        while (pos < cell.size() && std::isspace(static_cast<unsigned char>(cell[pos]))) ++pos;
        if (pos != cell.size()) numeric = false;
      } catch (const std::exception&) {
        numeric = false;
      }
      if (!numeric) break;
    }
    if (!numeric) {
      if (first) {  // header row
        first = false;
        continue;
      }
      throw std::runtime_error("observations csv: non-numeric cell in " + path);
    }
    first = false;
    if (!rows.empty() && row.size() != rows.front().size())
      throw std::runtime_error("observations csv: inconsistent column count in " + path);
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw std::runtime_error("observations csv: no data rows in " + path);
  Eigen::MatrixXd m(rows.size(), rows.front().size());
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < rows[i].size(); ++j)
      m(static_cast<int>(i), static_cast<int>(j)) = rows[i][j];
  return Observations(std::move(m));
}

Eigen::VectorXd mean_corrected_log_returns(const Eigen::VectorXd& prices, double scale) {
  if (prices.size() < 2) throw std::invalid_argument("returns: need at least two prices");
  for (int i = 0; i < prices.size(); ++i)
    if (!(prices[i] > 0.0)) throw std::invalid_argument("returns: prices must be positive");
  Eigen::VectorXd r(prices.size() - 1);
  for (int i = 0; i + 1 < prices.size(); ++i) r[i] = std::log(prices[i + 1] / prices[i]);
  return scale * (r.array() - r.mean()).matrix();
}

double log_transition_density(const TransitionKernel& kernel, const Eigen::VectorXd& x,
                              const Eigen::VectorXd& x_next) {
  const auto comps = kernel.components(x);
  Eigen::VectorXd terms(comps.size());
  for (std::size_t k = 0; k < comps.size(); ++k)
    terms[static_cast<int>(k)] = comps[k].log_weight + log_gaussian_density(x_next, comps[k]);
  return log_sum_exp(terms);
}

HmmModel::HmmModel(std::vector<GaussianComponent> initial, TransitionKernel transition,
                   LogGFn log_g, Observations observations,
                   std::optional<LinearGaussianSpec> lg)
    : initial_(std::move(initial)),
      transition_(std::move(transition)),
      log_g_(std::move(log_g)),
      observations_(std::move(observations)),
      lg_(std::move(lg)) {
  if (initial_.empty()) throw std::invalid_argument("model: empty initial mixture");
  Eigen::VectorXd lw(initial_.size());
  for (std::size_t k = 0; k < initial_.size(); ++k) {
    if (initial_[k].mean.size() != transition_.dim())
      throw std::invalid_argument("model: initial mixture dimension mismatch");
    lw[static_cast<int>(k)] = initial_[k].log_weight;
  }
  if (std::abs(log_sum_exp(lw)) > 1e-9)
    throw std::invalid_argument("model: initial mixture weights must sum to one");
}

const LinearGaussianSpec& HmmModel::linear_gaussian() const {
  if (!lg_) throw std::logic_error("model: not tagged linear-Gaussian");
  return *lg_;
}

double HmmModel::log_initial_density(const Eigen::VectorXd& x) const {
  Eigen::VectorXd terms(initial_.size());
  for (std::size_t k = 0; k < initial_.size(); ++k)
    terms[static_cast<int>(k)] = initial_[k].log_weight + log_gaussian_density(x, initial_[k]);
  return log_sum_exp(terms);
}

HmmModel build_linear_gaussian(const Eigen::VectorXd& m, const Eigen::MatrixXd& Sigma,
                               const Eigen::MatrixXd& A, const Eigen::MatrixXd& B,
                               const Eigen::MatrixXd& C, const Eigen::MatrixXd& D,
                               Observations observations) {
  const int d = static_cast<int>(m.size());
  const int dy = static_cast<int>(C.rows());
  if (Sigma.rows() != d || Sigma.cols() != d || A.rows() != d || A.cols() != d ||
      B.rows() != d || B.cols() != d || C.cols() != d || D.rows() != dy || D.cols() != dy)
    throw std::invalid_argument("linear gaussian: inconsistent shapes");
  if (observations.dim() != dy)
    throw std::invalid_argument("linear gaussian: observation dimension mismatch");

  const Covariance cov_b = make_covariance(B);
  const Covariance cov_d = make_covariance(D);
  const double log_det_d = cov_d.log_det();

  TransitionKernel kernel(d, [A, cov_b](const Eigen::VectorXd& x) {
    return std::vector<GaussianComponent>{{A * x, cov_b, 0.0}};
  });

  const Eigen::MatrixXd y = observations.matrix();
  auto log_g = [C, cov_d, log_det_d, y, dy](int t, const Eigen::VectorXd& x) {
    const Eigen::VectorXd r = y.row(t).transpose() - C * x;
    return -0.5 * (dy * kLog2Pi + log_det_d + cov_d.quad_form(r));
  };

  std::vector<GaussianComponent> initial{{m, make_covariance(Sigma), 0.0}};
  LinearGaussianSpec spec{m, Sigma, A, B, C, D};
  return HmmModel(std::move(initial), std::move(kernel), std::move(log_g),
                  std::move(observations), std::move(spec));
}

namespace {

HmmModel build_sv_with_initial_variance(double alpha, double sigma, double beta,
                                        double initial_variance, Observations observations) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("sv: need 0 < alpha < 1");
  if (!(sigma > 0.0)) throw std::invalid_argument("sv: need sigma > 0");
  if (!(beta > 0.0)) throw std::invalid_argument("sv: need beta > 0");
  if (observations.dim() != 1) throw std::invalid_argument("sv: observations must be scalar");

  const Covariance step = Covariance::diagonal(Eigen::VectorXd::Constant(1, sigma * sigma));
  TransitionKernel kernel(1, [alpha, step](const Eigen::VectorXd& x) {
    return std::vector<GaussianComponent>{{alpha * x, step, 0.0}};
  });

  const Eigen::MatrixXd y = observations.matrix();
  const double log_beta_sq = 2.0 * std::log(beta);
  auto log_g = [y, beta, log_beta_sq](int t, const Eigen::VectorXd& x) {
    const double yt = y(t, 0);
    return -0.5 * (kLog2Pi + log_beta_sq + x[0] + yt * yt * std::exp(-x[0]) / (beta * beta));
  };

  std::vector<GaussianComponent> initial{
      {Eigen::VectorXd::Zero(1),
       Covariance::diagonal(Eigen::VectorXd::Constant(1, initial_variance)), 0.0}};
  return HmmModel(std::move(initial), std::move(kernel), std::move(log_g),
                  std::move(observations));
}

}  // namespace

HmmModel build_univariate_sv(double alpha, double sigma, double beta, Observations observations) {
  const double v0 = sigma * sigma / ((1.0 - alpha) * (1.0 - alpha));
  return build_sv_with_initial_variance(alpha, sigma, beta, v0, std::move(observations));
}

HmmModel build_univariate_sv_stationary(double alpha, double sigma, double beta,
                                        Observations observations) {
  const double v0 = sigma * sigma / (1.0 - alpha * alpha);
  return build_sv_with_initial_variance(alpha, sigma, beta, v0, std::move(observations));
}

Eigen::MatrixXd msv_stationary_covariance(const Eigen::VectorXd& phi, const Eigen::MatrixXd& U) {
  const int d = static_cast<int>(phi.size());
  if (U.rows() != d || U.cols() != d) throw std::invalid_argument("msv: U shape mismatch");
  for (int i = 0; i < d; ++i)
    if (!(std::abs(phi[i]) < 1.0)) throw std::invalid_argument("msv: need |phi_i| < 1");
  Eigen::MatrixXd u_star(d, d);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) u_star(i, j) = U(i, j) / (1.0 - phi[i] * phi[j]);
  return u_star;
}

HmmModel build_multivariate_sv(const Eigen::VectorXd& m, const Eigen::VectorXd& phi,
                               const Eigen::MatrixXd& U, Observations observations) {
  const int d = static_cast<int>(m.size());
  if (phi.size() != d) throw std::invalid_argument("msv: phi shape mismatch");
  if (observations.dim() != d) throw std::invalid_argument("msv: observation dimension mismatch");
  const Eigen::MatrixXd u_star = msv_stationary_covariance(phi, U);

  const Covariance step = make_covariance(U);
  TransitionKernel kernel(d, [m, phi, step](const Eigen::VectorXd& x) {
    return std::vector<GaussianComponent>{
        {m + phi.cwiseProduct(x - m), step, 0.0}};
  });

  const Eigen::MatrixXd y = observations.matrix();
  auto log_g = [y, d](int t, const Eigen::VectorXd& x) {
    double acc = -0.5 * d * kLog2Pi;
    for (int i = 0; i < d; ++i) {
      const double yi = y(t, i);
      acc += -0.5 * (x[i] + yi * yi * std::exp(-x[i]));
    }
    return acc;
  };

  std::vector<GaussianComponent> initial{{m, make_covariance(u_star), 0.0}};
  return HmmModel(std::move(initial), std::move(kernel), std::move(log_g),
                  std::move(observations));
}

double log_transition_apply_psi(const HmmModel& model, const Eigen::VectorXd& x,
                                const PsiFunction& psi) {
  const auto comps = model.transition().components(x);
  Eigen::VectorXd terms(comps.size());
  for (std::size_t k = 0; k < comps.size(); ++k)
    terms[static_cast<int>(k)] = comps[k].log_weight + log_component_psi_integral(comps[k], psi);
  return log_sum_exp(terms);
}

double transition_apply_psi(const HmmModel& model, const Eigen::VectorXd& x,
                            const PsiFunction& psi) {
  return std::exp(log_transition_apply_psi(model, x, psi));
}

Eigen::MatrixXd alpha_power_matrix(int d, double alpha) {
  Eigen::MatrixXd a(d, d);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) a(i, j) = std::pow(alpha, std::abs(i - j) + 1);
  return a;
}

Observations simulate_linear_gaussian(const LinearGaussianSpec& spec, int horizon, Rng& rng) {
  const int d = static_cast<int>(spec.m.size());
  const int dy = static_cast<int>(spec.C.rows());
  const Covariance sig = Covariance::dense(spec.Sigma);
  const Covariance b = Covariance::dense(spec.B);
  const Covariance dcov = Covariance::dense(spec.D);
  Eigen::MatrixXd ys(horizon, dy);
  Eigen::VectorXd x = sample_gaussian(rng, {spec.m, sig, 0.0});
  for (int t = 0; t < horizon; ++t) {
    if (t > 0) x = sample_gaussian(rng, {spec.A * x, b, 0.0});
    ys.row(t) = sample_gaussian(rng, {spec.C * x, dcov, 0.0}).transpose();
  }
  return Observations(std::move(ys));
}

Observations simulate_univariate_sv(double alpha, double sigma, double beta, int horizon,
                                    Rng& rng) {
  Eigen::MatrixXd ys(horizon, 1);
  double x = std::sqrt(sigma * sigma / ((1.0 - alpha) * (1.0 - alpha))) * rng.normal();
  for (int t = 0; t < horizon; ++t) {
    if (t > 0) x = alpha * x + sigma * rng.normal();
    ys(t, 0) = beta * std::exp(0.5 * x) * rng.normal();
  }
  return Observations(std::move(ys));
}

Observations simulate_multivariate_sv(const Eigen::VectorXd& m, const Eigen::VectorXd& phi,
                                      const Eigen::MatrixXd& U, int horizon, Rng& rng) {
  const int d = static_cast<int>(m.size());
  const Covariance u_star = Covariance::dense(msv_stationary_covariance(phi, U));
  const Covariance step = Covariance::dense(U);
  Eigen::MatrixXd ys(horizon, d);
  Eigen::VectorXd x = sample_gaussian(rng, {m, u_star, 0.0});
  for (int t = 0; t < horizon; ++t) {
    if (t > 0) x = sample_gaussian(rng, {m + phi.cwiseProduct(x - m), step, 0.0});
    for (int i = 0; i < d; ++i) ys(t, i) = std::exp(0.5 * x[i]) * rng.normal();
  }
  return Observations(std::move(ys));
}

}  // namespace iapf
