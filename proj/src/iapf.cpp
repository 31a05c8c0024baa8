#include "iapf/iapf.hpp"

#include <cmath>
#include <sstream>

#include <json.hpp>

namespace iapf {

double relative_sd_from_logs(const std::vector<double>& logs) {
  if (logs.size() < 2) throw std::invalid_argument("relative sd: need at least two values");
  double m = logs[0];
  for (double v : logs) m = std::max(m, v);
  double mean = 0.0;
  for (double v : logs) mean += std::exp(v - m);
  mean /= static_cast<double>(logs.size());
  double ss = 0.0;
  for (double v : logs) {
    const double r = std::exp(v - m) - mean;
    ss += r * r;
  }
  const double sd = std::sqrt(ss / static_cast<double>(logs.size() - 1));
  return sd / mean;
}

namespace {

bool weakly_increasing(const std::vector<double>& zs, std::size_t lo, std::size_t hi) {
  for (std::size_t i = lo; i < hi; ++i)
    if (zs[i + 1] < zs[i]) return false;
  return true;
}

}  // namespace

IapfResult run_iapf(const HmmModel& model, const IapfConfig& config,
                    const PsiSequence* fixed_psi) {
  if (config.n0 < 1 || config.k < 1 || !(config.tau > 0.0))
    throw std::invalid_argument("iapf: invalid configuration");
  if (config.n_max < config.n0 || config.l_max < 1)
    throw std::invalid_argument("iapf: caps must cover the initial values");

  PsiSequence psi = fixed_psi
                        ? *fixed_psi
                        : PsiSequence::all_constant(model.horizon(), model.dim_state());
  IapfTrace trace;
  std::vector<double> zs;
  std::vector<int> ns;
  int n = config.n0;

  for (int l = 0;; ++l) {
    if (l >= config.l_max) {
      trace.termination = "iteration_limit";
      throw IapfIterationLimit(std::move(trace));
    }

    FilterConfig fc;
    fc.kappa = config.kappa;
    fc.n_particles = n;
    fc.seed = mix_seed(config.seed, 2 * static_cast<std::uint64_t>(l));
    FilterOutput out;
    try {
      out = run_psi_apf(model, psi, fc);
    } catch (const ParticleCollapse&) {
      // One restart of the failed iteration with doubled N.
      if (2 * n > config.n_max) {
        trace.termination = "particle_limit";
        throw IapfParticleLimit(std::move(trace));
      }
      n *= 2;
      fc.n_particles = n;
      out = run_psi_apf(model, psi, fc);
    }

    zs.push_back(out.log_z);
    ns.push_back(n);
    trace.iterations.push_back({l, n, out.log_z, out.resampling_count(), out.wall_ms, false});

    if (l >= config.k) {
      const std::vector<double> window(zs.end() - (config.k + 1), zs.end());
      if (relative_sd_from_logs(window) < config.tau) {
        trace.termination = "stop_rule";
        FilterConfig final_fc;
        final_fc.kappa = config.kappa;
        final_fc.n_particles = n;
        final_fc.seed = mix_seed(config.seed, 2 * static_cast<std::uint64_t>(l) + 1);
        const FilterOutput final_out = run_psi_apf(model, psi, final_fc);
        trace.iterations.push_back(
            {l + 1, n, final_out.log_z, final_out.resampling_count(), final_out.wall_ms, true});
        return {final_out.log_z, std::move(psi), std::move(trace), n};
      }
    }

    if (!fixed_psi) psi = approximate_psi_sequence(model, out, config.fit);

    if (l >= config.k && ns[l - config.k] == n &&
        !weakly_increasing(zs, zs.size() - 1 - config.k, zs.size() - 1)) {
      if (2 * n > config.n_max) {
        trace.termination = "particle_limit";
        throw IapfParticleLimit(std::move(trace));
      }
      n *= 2;
    }
  }
}

std::string trace_jsonl(const IapfTrace& trace, bool stable) {
  std::ostringstream out;
  for (const auto& it : trace.iterations) {
    nlohmann::json j;
    j["l"] = it.l;
    j["N"] = it.n_particles;
    j["log_z"] = it.log_z;
    j["resampling_count"] = it.resampling_count;
    j["final"] = it.final_run;
    if (!stable) j["wall_time_ms"] = it.wall_ms;
    out << j.dump() << "\n";
  }
  return out.str();
}

}  // namespace iapf
