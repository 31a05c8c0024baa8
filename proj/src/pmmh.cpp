#include "iapf/pmmh.hpp"

#include <cmath>
#include <limits>

namespace iapf {

namespace {
constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double lgamma_(double x) { return std::lgamma(x); }
}  // namespace

Prior Prior::uniform(double a, double b) {
  if (!(a < b)) throw std::invalid_argument("prior: uniform needs a < b");
  Prior p;
  p.kind_ = Kind::kUniform;
  p.a_ = a;
  p.b_ = b;
  p.log_norm_ = -std::log(b - a);
  return p;
}

Prior Prior::inverse_gamma(double shape, double scale) {
  if (!(shape > 0.0 && scale > 0.0))
    throw std::invalid_argument("prior: inverse gamma needs positive shape and scale");
  Prior p;
  p.kind_ = Kind::kInverseGamma;
  p.a_ = shape;
  p.b_ = scale;
  p.log_norm_ = shape * std::log(scale) - lgamma_(shape);
  return p;
}

Prior Prior::inverse_gamma_on_square(double shape, double scale) {
  Prior p = inverse_gamma(shape, scale);
  p.kind_ = Kind::kInverseGammaSq;
  return p;
}

Prior Prior::beta(double a, double b) {
  if (!(a > 0.0 && b > 0.0)) throw std::invalid_argument("prior: beta needs positive shapes");
  Prior p;
  p.kind_ = Kind::kBeta;
  p.a_ = a;
  p.b_ = b;
  p.log_norm_ = lgamma_(a + b) - lgamma_(a) - lgamma_(b);
  return p;
}

Prior Prior::symmetric_triangular() {
  Prior p;
  p.kind_ = Kind::kTriangular;
  return p;
}

Prior Prior::improper_flat() {
  Prior p;
  p.kind_ = Kind::kFlat;
  return p;
}

double Prior::log_density(double x) const {
  switch (kind_) {
    case Kind::kUniform:
      return (x >= a_ && x <= b_) ? log_norm_ : kNegInf;
    case Kind::kInverseGamma:
      if (!(x > 0.0)) return kNegInf;
      return log_norm_ - (a_ + 1.0) * std::log(x) - b_ / x;
    case Kind::kInverseGammaSq: {
      if (!(x > 0.0)) return kNegInf;
      const double sq = x * x;
      return log_norm_ - (a_ + 1.0) * std::log(sq) - b_ / sq + std::log(2.0 * x);
    }
    case Kind::kBeta:
      if (!(x > 0.0 && x < 1.0)) return kNegInf;
      return log_norm_ + (a_ - 1.0) * std::log(x) + (b_ - 1.0) * std::log1p(-x);
    case Kind::kTriangular:
      if (!(x > -1.0 && x < 1.0)) return kNegInf;
      return std::log(1.0 - std::abs(x));
    case Kind::kFlat:
      return 0.0;
  }
  return kNegInf;
}

namespace {

double estimate_log_z(const HmmModel& model, const EstimatorSpec& spec, std::uint64_t seed) {
  switch (spec.kind) {
    case EstimatorSpec::Kind::kKalman:
      return kalman_log_likelihood(model);
    case EstimatorSpec::Kind::kBpf: {
      FilterConfig fc;
      fc.n_particles = spec.n_particles;
      fc.kappa = spec.kappa;
      fc.seed = seed;
      return run_bpf(model, fc).log_z;
    }
    case EstimatorSpec::Kind::kIapf: {
      IapfConfig cfg = spec.iapf;
      cfg.seed = seed;
      return run_iapf(model, cfg).log_z;
    }
  }
  throw std::logic_error("estimator: unknown kind");
}

}  // namespace

Chain run_pmmh(const std::function<HmmModel(const Eigen::VectorXd&)>& model_builder,
               const std::vector<Prior>& priors, const Eigen::VectorXd& theta0,
               const MhConfig& config) {
  const int p = static_cast<int>(theta0.size());
  if (static_cast<int>(priors.size()) != p)
    throw std::invalid_argument("pmmh: one prior per parameter component");
  if (config.proposal_sd.size() != p || (config.proposal_sd.array() <= 0.0).any())
    throw std::invalid_argument("pmmh: positive proposal sd per component");
  if (config.chain_length < 1) throw std::invalid_argument("pmmh: chain length must be >= 1");

  for (int c = 0; c < p; ++c)
    if (!std::isfinite(priors[c].log_density(theta0[c])))
      throw std::invalid_argument("pmmh: starting point outside the prior support");

  Chain chain;
  chain.samples.resize(config.chain_length, p);
  chain.log_z_trace.resize(config.chain_length);
  chain.proposals_per_component.assign(p, 0);
  chain.accepts_per_component.assign(p, 0);

  Eigen::VectorXd theta = theta0;
  double log_z = estimate_log_z(model_builder(theta), config.estimator,
                                mix_seed(config.seed, 0));
  ++chain.estimator_calls;

  Rng walk(mix_seed(config.seed, 0x77a1));
  for (int step = 0; step < config.chain_length; ++step) {
    const int c = step % p;
    ++chain.proposals_per_component[c];

    Eigen::VectorXd proposal = theta;
    proposal[c] += config.proposal_sd[c] * walk.normal();

    const double lp_new = priors[c].log_density(proposal[c]);
    bool accept = false;
    if (std::isfinite(lp_new)) {
      const double lp_old = priors[c].log_density(theta[c]);
      double log_z_new = kNegInf;
      bool failed = false;
      try {
        log_z_new = estimate_log_z(model_builder(proposal), config.estimator,
                                   mix_seed(config.seed, 1 + static_cast<std::uint64_t>(step)));
        ++chain.estimator_calls;
      } catch (const std::exception&) {
        ++chain.estimator_calls;
        ++chain.estimator_failures;
        failed = true;
      }
      if (!failed) {
        const double log_alpha = log_z_new - log_z + lp_new - lp_old;
        accept = std::log(walk.uniform01()) < log_alpha;
        if (accept) {
          theta = proposal;
          log_z = log_z_new;  // the cached estimate moves only on acceptance
          ++chain.accepts_per_component[c];
        }
      }
    }
    chain.samples.row(step) = theta.transpose();
    chain.log_z_trace[step] = log_z;
  }
  return chain;
}

double iact(const Eigen::VectorXd& samples) {
  const int n = static_cast<int>(samples.size());
  if (n < 100) throw std::invalid_argument("iact: need at least 100 samples");
  const double mean = samples.mean();
  const Eigen::VectorXd centered = samples.array() - mean;
  const double var = centered.squaredNorm() / n;
  if (!(var > 0.0)) throw std::invalid_argument("iact: constant sequence");

  const auto autocov = [&](int lag) {
    double acc = 0.0;
    for (int i = 0; i + lag < n; ++i) acc += centered[i] * centered[i + lag];
    return acc / n;
  };

  // Geyer initial positive sequence: sum paired autocovariances while the
  // pair sums stay positive.
  double total = -var;
  for (int m = 0; 2 * m + 1 < n; ++m) {
    const double pair = autocov(2 * m) + autocov(2 * m + 1);
    if (pair <= 0.0) break;
    total += 2.0 * pair;
  }
  return std::max(total / var, 1e-12);
}

}  // namespace iapf
