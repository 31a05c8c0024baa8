#pragma once

#include "iapf/fit.hpp"

namespace iapf {

struct IapfConfig {
  int n0 = 1000;
  int k = 3;
  double tau = 0.5;
  double kappa = 0.5;
  std::uint64_t seed = 0;
  int n_max = 1 << 22;
  int l_max = 100;
  FitConfig fit;
};

struct IapfIterationRecord {
  int l = 0;
  int n_particles = 0;
  double log_z = 0.0;
  int resampling_count = 0;
  double wall_ms = 0.0;
  bool final_run = false;
};

struct IapfTrace {
  std::vector<IapfIterationRecord> iterations;
  std::string termination;
};

struct IapfResult {
  double log_z = 0.0;
  PsiSequence psi;
  IapfTrace trace;
  int n_final = 0;
};

struct IapfIterationLimit : std::runtime_error {
  explicit IapfIterationLimit(IapfTrace trace_)
      : std::runtime_error("iapf: iteration limit exceeded"), trace(std::move(trace_)) {}
  IapfTrace trace;
};

struct IapfParticleLimit : std::runtime_error {
  explicit IapfParticleLimit(IapfTrace trace_)
      : std::runtime_error("iapf: particle limit exceeded"), trace(std::move(trace_)) {}
  IapfTrace trace;
};

// Relative standard deviation of estimates given as logs, computed after a
// max shift so it is invariant to common scaling; sample sd with divisor
// count - 1.
double relative_sd_from_logs(const std::vector<double>& logs);

// The iterated filter: run a psi-APF, refit psi from its particles, double
// the particle count when the recent estimates oscillate at constant N,
// stop once the last k+1 estimates have relative sd below tau, then run
// one final filter on a fresh substream and return its estimate together
// with the final twist. fixed_psi (test hook) bypasses the refit and uses
// the supplied sequence at every iteration. A collapsed filter restarts
// its iteration once with doubled N before the error propagates.
IapfResult run_iapf(const HmmModel& model, const IapfConfig& config,
                    const PsiSequence* fixed_psi = nullptr);

// One record per iteration, final run included.
std::string trace_jsonl(const IapfTrace& trace, bool stable = false);

}  // namespace iapf
