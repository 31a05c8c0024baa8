#include "iapf/twist.hpp"

#include <cmath>
#include <limits>

namespace iapf {

namespace {
constexpr double kLog2Pi = 1.8378770664093454836;
constexpr double kNegInf = -std::numeric_limits<double>::infinity();
}  // namespace

ScaledGaussian gaussian_in_state_from_observation(const Eigen::MatrixXd& H,
                                                  const Eigen::MatrixXd& R,
                                                  const Eigen::VectorXd& y) {
  const int dx = static_cast<int>(H.cols());
  const int dy = static_cast<int>(H.rows());
  if (R.rows() != dy || R.cols() != dy || y.size() != dy)
    throw std::invalid_argument("observation pullback: shape mismatch");
  Eigen::LLT<Eigen::MatrixXd> llt_r(0.5 * (R + R.transpose()));
  if (llt_r.info() != Eigen::Success)
    throw std::invalid_argument("observation pullback: noise covariance not positive definite");

  const Eigen::MatrixXd w = llt_r.matrixL().solve(H);  // L^-1 H
  Eigen::MatrixXd prec = w.transpose() * w;            // H' R^-1 H
  prec = 0.5 * (prec + prec.transpose());
  Eigen::LLT<Eigen::MatrixXd> llt_p(prec);
  if (llt_p.info() != Eigen::Success)
    throw UnrepresentablePsi("observation pullback: matrix must have full column rank");

  const Eigen::VectorXd z = llt_r.matrixL().solve(y);
  const Eigen::VectorXd hty = w.transpose() * z;  // H' R^-1 y
  const Eigen::VectorXd mean = llt_p.solve(hty);
  Eigen::MatrixXd cov = llt_p.solve(Eigen::MatrixXd::Identity(dx, dx));
  cov = 0.5 * (cov + cov.transpose());

  const double log_det_r = 2.0 * Eigen::MatrixXd(llt_r.matrixL()).diagonal().array().log().sum();
  const double log_det_p = 2.0 * Eigen::MatrixXd(llt_p.matrixL()).diagonal().array().log().sum();
  const double residual = z.squaredNorm() - hty.dot(mean);
  const double log_scale =
      -0.5 * ((dy - dx) * kLog2Pi + log_det_r + log_det_p + residual);
  return {log_scale, {mean, Covariance::dense(std::move(cov)), 0.0}};
}

TwistedModel::TwistedModel(HmmModel model, PsiSequence psi)
    : model_(std::move(model)), psi_(std::move(psi)) {
  if (psi_.size() != model_.horizon())
    throw std::invalid_argument("twisted model: psi sequence length must equal the horizon");
  if (psi_.dim() != model_.dim_state())
    throw std::invalid_argument("twisted model: psi dimension mismatch");
  initial_mix_ = twist_mixture(model_.initial(), psi_[0]);
  log_psi_tilde0_ = initial_mix_.log_norm;
  if (!std::isfinite(log_psi_tilde0_))
    throw std::invalid_argument("twisted model: psi_tilde_0 must be positive");
}

TwistedModel::Mixture TwistedModel::twist_mixture(const std::vector<GaussianComponent>& base,
                                                  const PsiFunction& psi) {
  Mixture mix;
  const auto& pcomps = psi.components();
  mix.log_w.reserve(base.size() * (pcomps.size() + 1));
  mix.comps.reserve(base.size() * (pcomps.size() + 1));
  const double ls = psi.log_scale();
  for (const auto& b : base) {
    if (psi.log_constant() != kNegInf) {
      mix.log_w.push_back(b.log_weight + ls + psi.log_constant());
      mix.comps.push_back({b.mean, b.cov, 0.0});
    }
    for (const auto& p : pcomps) {
      ScaledGaussian prod = gaussian_product(b, p);
      mix.log_w.push_back(b.log_weight + ls + p.log_weight + prod.log_scale);
      mix.comps.push_back(std::move(prod.comp));
    }
  }
  mix.log_norm = log_sum_exp(
      Eigen::Map<const Eigen::VectorXd>(mix.log_w.data(), static_cast<int>(mix.log_w.size())));
  return mix;
}

Eigen::VectorXd TwistedModel::sample_mixture(const Mixture& mix, Rng& rng) {
  std::size_t pick = 0;
  if (mix.comps.size() > 1) {
    double m = kNegInf;
    for (double lw : mix.log_w) m = std::max(m, lw);
    double total = 0.0;
    for (double lw : mix.log_w) total += std::exp(lw - m);
    double u = rng.uniform01() * total;
    double acc = 0.0;
    for (std::size_t k = 0; k < mix.log_w.size(); ++k) {
      acc += std::exp(mix.log_w[k] - m);
      if (u < acc || k + 1 == mix.log_w.size()) {
        pick = k;
        break;
      }
    }
  }
  return sample_gaussian(rng, mix.comps[pick]);
}

double TwistedModel::log_mixture_density(const Mixture& mix, const Eigen::VectorXd& x) {
  Eigen::VectorXd terms(mix.comps.size());
  for (std::size_t k = 0; k < mix.comps.size(); ++k)
    terms[static_cast<int>(k)] = mix.log_w[k] + log_gaussian_density(x, mix.comps[k]);
  return log_sum_exp(terms) - mix.log_norm;
}

double TwistedModel::log_psi_tilde(int t, const Eigen::VectorXd& x) const {
  if (t >= model_.horizon() - 1) return 0.0;
  const PsiFunction& next = psi_[t + 1];
  if (next.is_constant()) return next.log_scale() + next.log_constant();
  return log_transition_apply_psi(model_, x, next);
}

Eigen::VectorXd TwistedModel::sample_initial(Rng& rng) const {
  return sample_mixture(initial_mix_, rng);
}

double TwistedModel::log_initial_density(const Eigen::VectorXd& x) const {
  return log_mixture_density(initial_mix_, x);
}

namespace {

// Single base component against C + one diagonal component: the overall
// mixture has at most two entries, built without temporaries. Entry order
// matches twist_mixture (constant term first).
Eigen::VectorXd sample_pair_diag(const GaussianComponent& base, const PsiFunction& psi,
                                 Rng& rng) {
  const auto& p = psi.components()[0];
  const auto& bv = base.cov.diag();
  const auto& pv = p.cov.diag();
  const int d = static_cast<int>(bv.size());

  double log_scale = 0.0;
  for (int j = 0; j < d; ++j) {
    const double v = bv[j] + pv[j];
    const double r = base.mean[j] - p.mean[j];
    log_scale += std::log(v) + r * r / v;
  }
  log_scale = -0.5 * (d * kLog2Pi + log_scale);
  const double lw_comp = p.log_weight + log_scale;
  const double lw_const = psi.log_constant();

  bool pick_base = false;
  if (lw_const != kNegInf) {
    const double m = lw_const > lw_comp ? lw_const : lw_comp;
    const double w_const = std::exp(lw_const - m);
    const double total = w_const + std::exp(lw_comp - m);
    pick_base = rng.uniform01() * total < w_const;
  }
  Eigen::VectorXd out(d);
  if (pick_base) {
    for (int j = 0; j < d; ++j) out[j] = base.mean[j] + std::sqrt(bv[j]) * rng.normal();
    return out;
  }
  for (int j = 0; j < d; ++j) {
    const double var = bv[j] * pv[j] / (bv[j] + pv[j]);
    const double mean = var * (base.mean[j] / bv[j] + p.mean[j] / pv[j]);
    out[j] = mean + std::sqrt(var) * rng.normal();
  }
  return out;
}

}  // namespace

Eigen::VectorXd TwistedModel::sample_transition(int t, const Eigen::VectorXd& x_prev,
                                                Rng& rng) const {
  const auto base = model_.transition().components(x_prev);
  const PsiFunction& psi_t = psi_[t];
  if (base.size() == 1 && psi_t.components().size() == 1 && base[0].cov.is_diagonal() &&
      psi_t.components()[0].cov.is_diagonal())
    return sample_pair_diag(base[0], psi_t, rng);
  if (psi_t.is_constant()) {
    // f_psi = f when psi_t is constant.
    std::size_t pick = 0;
    if (base.size() > 1) {
      double u = rng.uniform01();
      double acc = 0.0;
      for (std::size_t k = 0; k < base.size(); ++k) {
        acc += std::exp(base[k].log_weight);
        if (u < acc || k + 1 == base.size()) {
          pick = k;
          break;
        }
      }
    }
    return sample_gaussian(rng, base[pick]);
  }
  return sample_mixture(twist_mixture(base, psi_t), rng);
}

double TwistedModel::log_transition_density(int t, const Eigen::VectorXd& x_prev,
                                            const Eigen::VectorXd& x) const {
  const auto base = model_.transition().components(x_prev);
  const PsiFunction& psi_t = psi_[t];
  if (psi_t.is_constant()) {
    Eigen::VectorXd terms(base.size());
    for (std::size_t k = 0; k < base.size(); ++k)
      terms[static_cast<int>(k)] = base[k].log_weight + log_gaussian_density(x, base[k]);
    return log_sum_exp(terms);
  }
  return log_mixture_density(twist_mixture(base, psi_t), x);
}

double TwistedModel::log_g_twisted(int t, const Eigen::VectorXd& x) const {
  double v = model_.log_g(t, x) + log_psi_tilde(t, x) - psi_eval_log(psi_[t], x);
  if (t == 0) v += log_psi_tilde0_;
  return v;
}

double integrand_log_ratio(const HmmModel& model, const PsiSequence& psi,
                           const std::vector<Eigen::VectorXd>& path) {
  if (static_cast<int>(path.size()) != model.horizon())
    throw std::invalid_argument("integrand_log_ratio: path length must equal the horizon");
  const TwistedModel tm(model, psi);
  double twisted = tm.log_initial_density(path[0]) + tm.log_g_twisted(0, path[0]);
  double plain = model.log_initial_density(path[0]) + model.log_g(0, path[0]);
  for (int t = 1; t < model.horizon(); ++t) {
    twisted += tm.log_transition_density(t, path[t - 1], path[t]) + tm.log_g_twisted(t, path[t]);
    plain += log_transition_density(model.transition(), path[t - 1], path[t]) +
             model.log_g(t, path[t]);
  }
  return twisted - plain;
}

PsiStarResult exact_psi_star_lgssm(const HmmModel& model) {
  const LinearGaussianSpec& spec = model.linear_gaussian();
  const int horizon = model.horizon();
  const Observations& ys = model.observations();

  std::vector<PsiFunction> psis;
  psis.reserve(horizon);

  ScaledGaussian current = gaussian_in_state_from_observation(spec.C, spec.D, ys.row(horizon - 1));
  std::vector<PsiFunction> reversed;
  reversed.push_back(PsiFunction::from_log_constant(
      model.dim_state(), kNegInf, {GaussianComponent{current.comp.mean, current.comp.cov, 0.0}},
      current.log_scale));

  for (int t = horizon - 2; t >= 0; --t) {
    // f(x, psi*_{t+1}) = scale_next N(Ax; m_next, B + S_next), rewritten as
    // a Gaussian in x and multiplied with g(., y_t).
    const Eigen::MatrixXd conv = spec.B + current.comp.cov.matrix();
    ScaledGaussian pulled = gaussian_in_state_from_observation(spec.A, conv, current.comp.mean);
    pulled.log_scale += current.log_scale;
    const ScaledGaussian g_part =
        gaussian_in_state_from_observation(spec.C, spec.D, ys.row(t));
    ScaledGaussian prod = gaussian_product(g_part.comp, pulled.comp);
    current.log_scale = g_part.log_scale + pulled.log_scale + prod.log_scale;
    current.comp = std::move(prod.comp);
    reversed.push_back(PsiFunction::from_log_constant(
        model.dim_state(), kNegInf, {GaussianComponent{current.comp.mean, current.comp.cov, 0.0}},
        current.log_scale));
  }

  for (auto it = reversed.rbegin(); it != reversed.rend(); ++it) psis.push_back(*it);
  PsiSequence seq(std::move(psis));

  Eigen::VectorXd terms(model.initial().size());
  for (std::size_t k = 0; k < model.initial().size(); ++k)
    terms[static_cast<int>(k)] =
        model.initial()[k].log_weight + log_component_psi_integral(model.initial()[k], seq[0]);
  return {std::move(seq), log_sum_exp(terms)};
}

PsiSequence fully_adapted_psi(const HmmModel& model) {
  if (!model.is_linear_gaussian())
    throw UnrepresentablePsi(
        "fully adapted twist unavailable: observation density is not a Gaussian in the state");
  const LinearGaussianSpec& spec = model.linear_gaussian();
  std::vector<PsiFunction> psis;
  psis.reserve(model.horizon());
  for (int t = 0; t < model.horizon(); ++t) {
    ScaledGaussian sg =
        gaussian_in_state_from_observation(spec.C, spec.D, model.observations().row(t));
    psis.push_back(PsiFunction::from_log_constant(
        model.dim_state(), kNegInf, {GaussianComponent{sg.comp.mean, sg.comp.cov, 0.0}},
        sg.log_scale));
  }
  return PsiSequence(std::move(psis));
}

}  // namespace iapf
