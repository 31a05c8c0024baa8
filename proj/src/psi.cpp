#include "iapf/psi.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

#include <json.hpp>

namespace iapf {

namespace {
constexpr double kNegInf = -std::numeric_limits<double>::infinity();
}

PsiFunction::PsiFunction(int dim, double constant, std::vector<GaussianComponent> components,
                         double log_scale)
    : dim_(dim), log_scale_(log_scale), components_(std::move(components)) {
  if (!(constant >= 0.0)) throw std::invalid_argument("psi: constant term must be >= 0");
  log_constant_ = constant > 0.0 ? std::log(constant) : kNegInf;
  if (constant == 0.0 && components_.empty())
    throw std::invalid_argument("psi: needs a positive constant or at least one component");
  for (const auto& c : components_) {
    if (c.mean.size() != dim_ || c.cov.dim() != dim_)
      throw std::invalid_argument("psi: component dimension mismatch");
    if (!std::isfinite(c.log_weight))
      throw std::invalid_argument("psi: mixture coefficients must be positive");
  }
  if (!std::isfinite(log_scale_)) throw std::invalid_argument("psi: log scale must be finite");
}

PsiFunction PsiFunction::from_log_constant(int dim, double log_constant,
                                           std::vector<GaussianComponent> components,
                                           double log_scale) {
  PsiFunction psi(dim, log_constant == kNegInf ? 0.0 : 1.0, std::move(components), log_scale);
  psi.log_constant_ = log_constant;
  if (log_constant == std::numeric_limits<double>::infinity() || std::isnan(log_constant))
    throw std::invalid_argument("psi: invalid log constant");
  if (log_constant == kNegInf && psi.components_.empty())
    throw std::invalid_argument("psi: needs a positive constant or at least one component");
  return psi;
}

PsiFunction PsiFunction::constant(int dim, double value) {
  if (!(value > 0.0)) throw std::invalid_argument("psi: constant function must be positive");
  return PsiFunction(dim, value, {});
}

PsiFunction PsiFunction::rescaled(double log_factor) const {
  PsiFunction out = *this;
  out.log_scale_ += log_factor;
  if (!std::isfinite(out.log_scale_))
    throw std::invalid_argument("psi: rescale factor must be finite");
  return out;
}

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

double log_add(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  const double m = a > b ? a : b;
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}

// log N(x; mean, sum of two diagonal covariances), allocation free.
double log_gaussian_diag_conv(const Eigen::VectorXd& x, const Eigen::VectorXd& mean,
                              const Eigen::VectorXd& v1, const Eigen::VectorXd& v2) {
  double acc = 0.0;
  for (int j = 0; j < x.size(); ++j) {
    const double v = v1[j] + v2[j];
    const double r = x[j] - mean[j];
    acc += std::log(v) + r * r / v;
  }
  return -0.5 * (x.size() * kLog2Pi + acc);
}

}  // namespace

double psi_eval_log(const PsiFunction& psi, const Eigen::VectorXd& x) {
  if (x.size() != psi.dim()) throw std::invalid_argument("psi_eval_log: dimension mismatch");
  if (psi.is_constant()) return psi.log_scale() + psi.log_constant();
  const auto& comps = psi.components();
  if (comps.size() == 1) {
    const double term = comps[0].log_weight + log_gaussian_density(x, comps[0]);
    return psi.log_scale() + log_add(psi.log_constant(), term);
  }
  Eigen::VectorXd terms(comps.size() + 1);
  terms[0] = psi.log_constant();
  for (std::size_t k = 0; k < comps.size(); ++k)
    terms[static_cast<int>(k) + 1] = comps[k].log_weight + log_gaussian_density(x, comps[k]);
  return psi.log_scale() + log_sum_exp(terms);
}

double log_component_psi_integral(const GaussianComponent& comp, const PsiFunction& psi) {
  if (comp.mean.size() != psi.dim())
    throw std::invalid_argument("component_psi_integral: dimension mismatch");
  if (psi.is_constant()) return psi.log_scale() + psi.log_constant();
  const auto& comps = psi.components();
  if (comps.size() == 1 && comp.cov.is_diagonal() && comps[0].cov.is_diagonal()) {
    const double term =
        comps[0].log_weight + log_gaussian_diag_conv(comp.mean, comps[0].mean,
                                                     comp.cov.diag(), comps[0].cov.diag());
    return psi.log_scale() + log_add(psi.log_constant(), term);
  }
  Eigen::VectorXd terms(comps.size() + 1);
  terms[0] = psi.log_constant();
  for (std::size_t k = 0; k < comps.size(); ++k) {
    const auto& pk = comps[k];
    GaussianComponent conv{pk.mean, covariance_sum(comp.cov, pk.cov), 0.0};
    terms[static_cast<int>(k) + 1] = pk.log_weight + log_gaussian_density(comp.mean, conv);
  }
  return psi.log_scale() + log_sum_exp(terms);
}

double component_psi_integral(const GaussianComponent& comp, const PsiFunction& psi) {
  return std::exp(log_component_psi_integral(comp, psi));
}

PsiSequence::PsiSequence(std::vector<PsiFunction> psis) : psis_(std::move(psis)) {
  if (psis_.empty()) throw std::invalid_argument("psi sequence: empty");
  for (const auto& p : psis_)
    if (p.dim() != psis_.front().dim())
      throw std::invalid_argument("psi sequence: inconsistent dimensions");
}

PsiSequence PsiSequence::all_constant(int horizon, int dim, double value) {
  return PsiSequence(std::vector<PsiFunction>(horizon, PsiFunction::constant(dim, value)));
}

PsiSequence PsiSequence::rescaled(const std::vector<double>& log_factors) const {
  if (static_cast<int>(log_factors.size()) != size())
    throw std::invalid_argument("psi sequence: wrong number of rescale factors");
  std::vector<PsiFunction> out;
  out.reserve(psis_.size());
  for (int t = 0; t < size(); ++t) out.push_back(psis_[t].rescaled(log_factors[t]));
  return PsiSequence(std::move(out));
}

namespace {

nlohmann::json vector_to_json(const Eigen::VectorXd& v) {
  return std::vector<double>(v.data(), v.data() + v.size());
}

Eigen::VectorXd vector_from_json(const nlohmann::json& j) {
  const auto vals = j.get<std::vector<double>>();
  return Eigen::Map<const Eigen::VectorXd>(vals.data(), static_cast<int>(vals.size()));
}

nlohmann::json component_to_json(const GaussianComponent& c) {
  nlohmann::json j;
  j["log_weight"] = c.log_weight;
  j["mean"] = vector_to_json(c.mean);
  if (c.cov.is_diagonal()) {
    j["cov_diag"] = vector_to_json(c.cov.diag());
  } else {
    const Eigen::MatrixXd m = c.cov.matrix();
    std::vector<std::vector<double>> rows(m.rows());
    for (int i = 0; i < m.rows(); ++i) {
      rows[i].resize(m.cols());
      for (int k = 0; k < m.cols(); ++k) rows[i][k] = m(i, k);
    }
    j["cov"] = rows;
  }
  return j;
}

GaussianComponent component_from_json(const nlohmann::json& j) {
  Eigen::VectorXd mean = vector_from_json(j.at("mean"));
  const double lw = j.at("log_weight").get<double>();
  if (j.contains("cov_diag"))
    return {std::move(mean), Covariance::diagonal(vector_from_json(j.at("cov_diag"))), lw};
  const auto rows = j.at("cov").get<std::vector<std::vector<double>>>();
  Eigen::MatrixXd m(rows.size(), rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t k = 0; k < rows[i].size(); ++k)
      m(static_cast<int>(i), static_cast<int>(k)) = rows[i][k];
  return {std::move(mean), Covariance::dense(std::move(m)), lw};
}

}  // namespace

std::string PsiSequence::to_json() const {
  nlohmann::json j;
  j["dim"] = dim();
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& psi : psis_) {
    nlohmann::json p;
    p["log_constant"] = psi.log_constant() == kNegInf ? nlohmann::json() : nlohmann::json(psi.log_constant());
    p["log_scale"] = psi.log_scale();
    nlohmann::json comps = nlohmann::json::array();
    for (const auto& c : psi.components()) comps.push_back(component_to_json(c));
    p["components"] = comps;
    arr.push_back(p);
  }
  j["psi"] = arr;
  return j.dump(2);
}

PsiSequence PsiSequence::from_json(const std::string& text) {
  const nlohmann::json j = nlohmann::json::parse(text);
  const int dim = j.at("dim").get<int>();
  std::vector<PsiFunction> psis;
  for (const auto& p : j.at("psi")) {
    const double log_c =
        p.at("log_constant").is_null() ? kNegInf : p.at("log_constant").get<double>();
    std::vector<GaussianComponent> comps;
    for (const auto& c : p.at("components")) comps.push_back(component_from_json(c));
    psis.push_back(PsiFunction::from_log_constant(dim, log_c, std::move(comps),
                                                  p.at("log_scale").get<double>()));
  }
  return PsiSequence(std::move(psis));
}

}  // namespace iapf
