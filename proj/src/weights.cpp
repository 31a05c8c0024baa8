#include "iapf/weights.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace iapf {

namespace {
constexpr double kNegInf = -std::numeric_limits<double>::infinity();
}

WeightVector::WeightVector(Eigen::VectorXd log_weights)
    : log_weights_(std::move(log_weights)) {
  if (log_weights_.size() < 1) throw std::invalid_argument("weights: empty vector");
  bool any_finite = false;
  for (int i = 0; i < log_weights_.size(); ++i) {
    const double w = log_weights_[i];
    if (std::isnan(w) || w == std::numeric_limits<double>::infinity())
      throw std::invalid_argument("weights: entries must be finite or -inf");
    any_finite = any_finite || std::isfinite(w);
  }
  if (!any_finite) throw std::invalid_argument("weights: all weights are zero");
}

Eigen::VectorXd WeightVector::probabilities() const {
  const double m = log_weights_.maxCoeff();
  Eigen::VectorXd p = (log_weights_.array() - m).exp();
  return p / p.sum();
}

double ess(const WeightVector& w) {
  const double m = w.log_weights().maxCoeff();
  double s1 = 0.0, s2 = 0.0;
  for (int i = 0; i < w.size(); ++i) {
    const double v = std::exp(w.log_weights()[i] - m);
    s1 += v;
    s2 += v * v;
  }
  return s1 * s1 / s2;
}

namespace {

std::vector<int> sample_inverse_cdf(Rng& rng, const Eigen::VectorXd& p, int count) {
  const int n = static_cast<int>(p.size());
  Eigen::VectorXd cdf(n);
  double acc = 0.0;
  for (int i = 0; i < n; ++i) {
    acc += p[i];
    cdf[i] = acc;
  }
  cdf[n - 1] = 1.0;
  std::vector<int> out(count);
  for (int k = 0; k < count; ++k) {
    const double u = rng.uniform01();
    int lo = 0, hi = n - 1;
    while (lo < hi) {
      const int mid = (lo + hi) / 2;
      if (u < cdf[mid])
        hi = mid;
      else
        lo = mid + 1;
    }
    out[k] = lo;
  }
  return out;
}

std::vector<int> sample_alias(Rng& rng, const Eigen::VectorXd& p, int count) {
  const int n = static_cast<int>(p.size());
  std::vector<double> prob(n);
  std::vector<int> alias(n, -1);
  std::vector<int> small, large;
  small.reserve(n);
  large.reserve(n);
  for (int i = 0; i < n; ++i) {
    prob[i] = p[i] * n;
    (prob[i] < 1.0 ? small : large).push_back(i);
  }
  while (!small.empty() && !large.empty()) {
    const int s = small.back();
    small.pop_back();
    const int l = large.back();
    alias[s] = l;
    prob[l] -= 1.0 - prob[s];
    if (prob[l] < 1.0) {
      large.pop_back();
      small.push_back(l);
    }
  }
  for (int i : small) prob[i] = 1.0;
  for (int i : large) prob[i] = 1.0;

  std::vector<int> out(count);
  for (int k = 0; k < count; ++k) {
    const int idx = rng.uniform_below(n);
    out[k] = (rng.uniform01() < prob[idx] || alias[idx] < 0) ? idx : alias[idx];
  }
  return out;
}

}  // namespace

std::vector<int> categorical_sample(Rng& rng, const WeightVector& w, int count) {
  if (count < 1) throw std::invalid_argument("categorical_sample: count must be >= 1");
  const Eigen::VectorXd p = w.probabilities();
  if (count > w.size()) return sample_alias(rng, p, count);
  return sample_inverse_cdf(rng, p, count);
}

}  // namespace iapf
