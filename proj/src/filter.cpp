#include "iapf/filter.hpp"

#include <chrono>
#include <cmath>
#include <limits>

#include <json.hpp>

namespace iapf {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// Substream keys: resampling at step t uses (seed, 2t), particle moves at
// step t use (seed, 2t+1) refined by the particle index.
std::uint64_t resample_key(std::uint64_t seed, int t) {
  return mix_seed(seed, 2 * static_cast<std::uint64_t>(t));
}
std::uint64_t move_key(std::uint64_t seed, int t) {
  return mix_seed(seed, 2 * static_cast<std::uint64_t>(t) + 1);
}

void check_weights(const Eigen::VectorXd& w, int step) {
  bool any_finite = false;
  for (int i = 0; i < w.size(); ++i) {
    if (std::isnan(w[i]) || w[i] == std::numeric_limits<double>::infinity())
      throw std::runtime_error("filter: invalid weight at step " + std::to_string(step));
    any_finite = any_finite || std::isfinite(w[i]);
  }
  if (!any_finite) throw ParticleCollapse(step);
}

}  // namespace

FilterOutput run_psi_apf(const HmmModel& model, const PsiSequence& psi,
                         const FilterConfig& config) {
  if (config.n_particles < 1) throw std::invalid_argument("filter: need at least one particle");
  if (config.kappa < 0.0 || config.kappa > 1.0)
    throw std::invalid_argument("filter: kappa must lie in [0, 1]");

  const auto t_start = std::chrono::steady_clock::now();
  const TwistedModel tm(model, psi);
  const int horizon = model.horizon();
  const int n = config.n_particles;
  const int d = model.dim_state();

  FilterOutput out;
  out.n_particles = n;
  out.kappa = config.kappa;
  out.seed = config.seed;
  out.ancestry_recorded = config.record_ancestry;
  out.particles.assign(horizon, Eigen::MatrixXd(d, n));
  out.log_weights.assign(horizon, Eigen::VectorXd(n));
  if (config.record_ancestry && horizon > 1) out.ancestors.resize(horizon - 1);
  out.per_step_log_means.resize(horizon);

  {
    const std::uint64_t key = move_key(config.seed, 0);
    for (int i = 0; i < n; ++i) {
      Rng rng(mix_seed(key, static_cast<std::uint64_t>(i)));
      const Eigen::VectorXd x = tm.sample_initial(rng);
      out.particles[0].col(i) = x;
      out.log_weights[0][i] = tm.log_g_twisted(0, x);
    }
    check_weights(out.log_weights[0], 0);
    out.per_step_log_means[0] = log_mean_exp(out.log_weights[0]);
  }

  for (int t = 1; t < horizon; ++t) {
    const WeightVector prev(out.log_weights[t - 1]);
    const bool resample = ess(prev) <= config.kappa * n;
    std::vector<int> parents;
    if (resample) {
      Rng rng(resample_key(config.seed, t));
      parents = categorical_sample(rng, prev, n);
      out.resampling_times.push_back(t - 1);
    }
    const std::uint64_t key = move_key(config.seed, t);
    for (int i = 0; i < n; ++i) {
      const int parent = resample ? parents[i] : i;
      Rng rng(mix_seed(key, static_cast<std::uint64_t>(i)));
      const Eigen::VectorXd x = tm.sample_transition(t, out.particles[t - 1].col(parent), rng);
      out.particles[t].col(i) = x;
      const double g = tm.log_g_twisted(t, x);
      out.log_weights[t][i] = resample ? g : out.log_weights[t - 1][i] + g;
    }
    if (config.record_ancestry) {
      if (resample) {
        out.ancestors[t - 1] = std::move(parents);
      } else {
        out.ancestors[t - 1].resize(n);
        for (int i = 0; i < n; ++i) out.ancestors[t - 1][i] = i;
      }
    }
    check_weights(out.log_weights[t], t);
    out.per_step_log_means[t] = log_mean_exp(out.log_weights[t]);
  }

  double log_z = out.per_step_log_means[horizon - 1];
  for (int t : out.resampling_times) log_z += out.per_step_log_means[t];
  out.log_z = log_z;
  out.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() -
                                                          t_start)
                    .count();
  return out;
}

FilterOutput run_bpf(const HmmModel& model, const FilterConfig& config) {
  return run_psi_apf(model, PsiSequence::all_constant(model.horizon(), model.dim_state()),
                     config);
}

Eigen::MatrixXi ancestral_lineages(const FilterOutput& out) {
  if (!out.ancestry_recorded) throw std::logic_error("lineages: ancestry was not recorded");
  const int horizon = static_cast<int>(out.particles.size());
  const int n = out.n_particles;
  Eigen::MatrixXi b(horizon, n);
  for (int i = 0; i < n; ++i) b(horizon - 1, i) = i;
  for (int t = horizon - 2; t >= 0; --t)
    for (int i = 0; i < n; ++i) b(t, i) = out.ancestors[t][b(t + 1, i)];
  return b;
}

double smoothing_expectation(const FilterOutput& out,
                             const std::function<double(const Eigen::MatrixXd&)>& phi) {
  const Eigen::MatrixXi b = ancestral_lineages(out);
  const int horizon = static_cast<int>(out.particles.size());
  const int d = static_cast<int>(out.particles[0].rows());
  const Eigen::VectorXd p = WeightVector(out.log_weights[horizon - 1]).probabilities();
  Eigen::MatrixXd path(d, horizon);
  double acc = 0.0;
  for (int i = 0; i < out.n_particles; ++i) {
    for (int t = 0; t < horizon; ++t) path.col(t) = out.particles[t].col(b(t, i));
    acc += p[i] * phi(path);
  }
  return acc;
}

double gamma_estimate(const FilterOutput& out,
                      const std::function<double(const Eigen::MatrixXd&)>& phi) {
  return smoothing_expectation(out, phi) * std::exp(out.log_z);
}

Eigen::MatrixXd smoothed_coordinate_means(const FilterOutput& out) {
  const Eigen::MatrixXi b = ancestral_lineages(out);
  const int horizon = static_cast<int>(out.particles.size());
  const int d = static_cast<int>(out.particles[0].rows());
  const Eigen::VectorXd p = WeightVector(out.log_weights[horizon - 1]).probabilities();
  Eigen::MatrixXd means = Eigen::MatrixXd::Zero(d, horizon);
  for (int i = 0; i < out.n_particles; ++i)
    for (int t = 0; t < horizon; ++t) means.col(t) += p[i] * out.particles[t].col(b(t, i));
  return means;
}

std::string filter_summary_json(const FilterOutput& out, const std::string& estimator,
                                bool stable) {
  nlohmann::json j;
  j["estimator"] = estimator;
  j["N"] = out.n_particles;
  j["kappa"] = out.kappa;
  j["seed"] = out.seed;
  j["log_z"] = out.log_z;
  j["resampling_count"] = out.resampling_count();
  if (!stable) j["wall_time_ms"] = out.wall_ms;
  return j.dump();
}

}  // namespace iapf
