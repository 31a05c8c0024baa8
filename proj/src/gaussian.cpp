#include "iapf/gaussian.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace iapf {

namespace {
constexpr double kLog2Pi = 1.8378770664093454836;
constexpr double kNegInf = -std::numeric_limits<double>::infinity();
}  // namespace

Covariance Covariance::diagonal(Eigen::VectorXd diag) {
  if (diag.size() < 1) throw std::invalid_argument("covariance: dimension must be >= 1");
  auto d = std::make_shared<Data>();
  d->is_diag = true;
  d->dim = static_cast<int>(diag.size());
  for (int i = 0; i < d->dim; ++i) {
    if (!(diag[i] > 0.0) || !std::isfinite(diag[i]))
      throw std::invalid_argument("covariance: diagonal entries must be positive and finite");
  }
  d->log_det = diag.array().log().sum();
  d->sqrt_diag = diag.array().sqrt();
  d->diag = std::move(diag);
  return Covariance(std::move(d));
}

Covariance Covariance::dense(Eigen::MatrixXd mat) {
  if (mat.rows() < 1 || mat.rows() != mat.cols())
    throw std::invalid_argument("covariance: matrix must be square");
  if (!((mat - mat.transpose()).cwiseAbs().maxCoeff() <=
        1e-8 * (1.0 + mat.cwiseAbs().maxCoeff())))
    throw std::invalid_argument("covariance: matrix must be symmetric");
  auto d = std::make_shared<Data>();
  d->is_diag = false;
  d->dim = static_cast<int>(mat.rows());
  d->mat = 0.5 * (mat + mat.transpose());
  Eigen::LLT<Eigen::MatrixXd> llt(d->mat);
  if (llt.info() != Eigen::Success)
    throw std::invalid_argument("covariance: matrix is not positive definite");
  d->chol = llt.matrixL();
  d->log_det = 2.0 * d->chol.diagonal().array().log().sum();
  return Covariance(std::move(d));
}

Covariance Covariance::identity(int dim) {
  return diagonal(Eigen::VectorXd::Ones(dim));
}

const Eigen::VectorXd& Covariance::diag() const {
  if (!data_->is_diag) throw std::logic_error("covariance: not a diagonal representation");
  return data_->diag;
}

Eigen::MatrixXd Covariance::matrix() const {
  if (data_->is_diag) return data_->diag.asDiagonal();
  return data_->mat;
}

Eigen::VectorXd Covariance::solve(const Eigen::VectorXd& v) const {
  if (data_->is_diag) return v.cwiseQuotient(data_->diag);
  Eigen::VectorXd w = data_->chol.triangularView<Eigen::Lower>().solve(v);
  return data_->chol.triangularView<Eigen::Lower>().transpose().solve(w);
}

double Covariance::quad_form(const Eigen::VectorXd& v) const {
  if (data_->is_diag) return (v.array().square() / data_->diag.array()).sum();
  Eigen::VectorXd w = data_->chol.triangularView<Eigen::Lower>().solve(v);
  return w.squaredNorm();
}

Eigen::VectorXd Covariance::unit_transform(const Eigen::VectorXd& z) const {
  if (data_->is_diag) return data_->sqrt_diag.cwiseProduct(z);
  return data_->chol.triangularView<Eigen::Lower>() * z;
}

Covariance covariance_sum(const Covariance& a, const Covariance& b) {
  if (a.dim() != b.dim()) throw std::invalid_argument("covariance_sum: dimension mismatch");
  if (a.is_diagonal() && b.is_diagonal()) return Covariance::diagonal(a.diag() + b.diag());
  return Covariance::dense(a.matrix() + b.matrix());
}

Covariance make_covariance(const Eigen::MatrixXd& mat) {
  if (mat.rows() == mat.cols()) {
    bool diag = true;
    for (int i = 0; i < mat.rows() && diag; ++i)
      for (int j = 0; j < mat.cols() && diag; ++j)
        if (i != j && mat(i, j) != 0.0) diag = false;
    if (diag) return Covariance::diagonal(mat.diagonal());
  }
  return Covariance::dense(mat);
}

double log_gaussian_density(const Eigen::VectorXd& x, const GaussianComponent& comp) {
  if (x.size() != comp.mean.size() || comp.cov.dim() != comp.mean.size())
    throw std::invalid_argument("log_gaussian_density: dimension mismatch");
  const Eigen::VectorXd r = x - comp.mean;
  return -0.5 * (x.size() * kLog2Pi + comp.cov.log_det() + comp.cov.quad_form(r));
}

ScaledGaussian gaussian_product(const GaussianComponent& c1, const GaussianComponent& c2) {
  const int d = static_cast<int>(c1.mean.size());
  if (c2.mean.size() != d || c1.cov.dim() != d || c2.cov.dim() != d)
    throw std::invalid_argument("gaussian_product: dimension mismatch");

  const Covariance s = covariance_sum(c1.cov, c2.cov);
  const double log_scale =
      log_gaussian_density(c1.mean, GaussianComponent{c2.mean, s, 0.0});

  if (c1.cov.is_diagonal() && c2.cov.is_diagonal()) {
    const auto& b1 = c1.cov.diag().array();
    const auto& b2 = c2.cov.diag().array();
    Eigen::VectorXd b = (b1 * b2 / (b1 + b2)).matrix();
    Eigen::VectorXd a =
        (b.array() * (c1.mean.array() / b1 + c2.mean.array() / b2)).matrix();
    return {log_scale, {std::move(a), Covariance::diagonal(std::move(b)), 0.0}};
  }

  // b = b1 (b1+b2)^{-1} b2 and a = b2 (b1+b2)^{-1} a1 + b1 (b1+b2)^{-1} a2,
  // computed through one factorization of b1+b2.
  const Eigen::MatrixXd m1 = c1.cov.matrix();
  const Eigen::MatrixXd m2 = c2.cov.matrix();
  Eigen::LLT<Eigen::MatrixXd> llt(m1 + m2);
  if (llt.info() != Eigen::Success)
    throw std::invalid_argument("gaussian_product: covariance sum not positive definite");
  Eigen::MatrixXd sinv_m2 = llt.solve(m2);
  Eigen::MatrixXd b = m1 * sinv_m2;
  b = 0.5 * (b + b.transpose());
  Eigen::VectorXd a = m2 * llt.solve(c1.mean) + m1 * llt.solve(c2.mean);
  return {log_scale, {std::move(a), Covariance::dense(std::move(b)), 0.0}};
}

Eigen::VectorXd sample_gaussian(Rng& rng, const GaussianComponent& comp) {
  Eigen::VectorXd z(comp.mean.size());
  for (int i = 0; i < z.size(); ++i) z[i] = rng.normal();
  return comp.mean + comp.cov.unit_transform(z);
}

double log_sum_exp(const Eigen::VectorXd& v) {
  double m = kNegInf;
  for (int i = 0; i < v.size(); ++i)
    if (v[i] > m) m = v[i];
  if (m == kNegInf) return kNegInf;
  double s = 0.0;
  for (int i = 0; i < v.size(); ++i) s += std::exp(v[i] - m);
  return m + std::log(s);
}

double log_mean_exp(const Eigen::VectorXd& v) {
  return log_sum_exp(v) - std::log(static_cast<double>(v.size()));
}

}  // namespace iapf
