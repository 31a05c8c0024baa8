#pragma once

#include <cstdint>
#include <functional>
#include <string>

#include "iapf/twist.hpp"
#include "iapf/weights.hpp"

namespace iapf {

struct FilterConfig {
  int n_particles = 1000;
  double kappa = 0.5;  // resample when ESS <= kappa N; 1 = always, 0 = never
  std::uint64_t seed = 0;
  bool record_ancestry = false;
};

// All particle weights vanished at a step: the twist and the model are
// incompatible, or the model assigns zero likelihood everywhere.
struct ParticleCollapse : std::runtime_error {
  explicit ParticleCollapse(int step_)
      : std::runtime_error("particle collapse at step " + std::to_string(step_)), step(step_) {}
  int step;
};

struct FilterOutput {
  std::vector<Eigen::MatrixXd> particles;   // horizon entries, each d x N
  std::vector<Eigen::VectorXd> log_weights; // horizon entries, each N
  std::vector<std::vector<int>> ancestors;  // horizon-1 rows when ancestry recorded
  std::vector<int> resampling_times;        // 0-based steps whose weights drove a resample
  Eigen::VectorXd per_step_log_means;
  double log_z = 0.0;
  int n_particles = 0;
  double kappa = 0.0;
  std::uint64_t seed = 0;
  bool ancestry_recorded = false;
  double wall_ms = 0.0;

  int resampling_count() const { return static_cast<int>(resampling_times.size()); }
};

// kappa-adaptive psi-auxiliary particle filter. Initial draws from mu_psi
// with weights g_psi_1; afterwards resample-and-move whenever
// ESS(W_{t-1}) <= kappa N (weights reset to g_psi_t), otherwise mutate and
// accumulate. log_z sums the per-step log mean weights over the resampling
// times plus the final step. Deterministic given the seed: every draw
// comes from a substream keyed on (seed, step, particle).
FilterOutput run_psi_apf(const HmmModel& model, const PsiSequence& psi,
                         const FilterConfig& config);

// Bootstrap filter: the psi-APF with an all-constant sequence.
FilterOutput run_bpf(const HmmModel& model, const FilterConfig& config);

// B(t, i): index at time t of the ancestor of terminal particle i.
Eigen::MatrixXi ancestral_lineages(const FilterOutput& out);

// Self-normalized smoothing estimate sum_i W_T^i phi(lineage_i) / sum_i W_T^i.
// phi receives the lineage as a d x horizon matrix.
double smoothing_expectation(const FilterOutput& out,
                             const std::function<double(const Eigen::MatrixXd&)>& phi);

// Unnormalized version: smoothing_expectation * exp(log_z).
double gamma_estimate(const FilterOutput& out,
                      const std::function<double(const Eigen::MatrixXd&)>& phi);

// Smoothed posterior mean of every state coordinate at every step; d x horizon.
Eigen::MatrixXd smoothed_coordinate_means(const FilterOutput& out);

// {estimator, N, kappa, seed, log_z, resampling_count, wall_time_ms}; the
// volatile wall_time_ms field is dropped when stable = true so that files
// replay byte-identically.
std::string filter_summary_json(const FilterOutput& out, const std::string& estimator,
                                bool stable = false);

}  // namespace iapf
