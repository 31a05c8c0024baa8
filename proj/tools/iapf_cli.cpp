// Experiment runner: filtering, iterated filtering, benchmark studies,
// PMMH chains, likelihood profiles and smoothing comparisons over the
// three model families, with JSON-lines records and JSON summaries that
// replay byte-identically for a fixed config, seed and thread count.

#include <atomic>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

#include "iapf/grid.hpp"
#include "iapf/iapf.hpp"
#include "iapf/kalman.hpp"
#include "iapf/pmmh.hpp"

using nlohmann::json;
using namespace iapf;

namespace {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void check_keys(const json& j, const std::string& context,
                std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw ConfigError(context + ": expected an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* key : allowed) ok = ok || it.key() == key;
    if (!ok) throw ConfigError(context + ": unknown key '" + it.key() + "'");
  }
}

json require(const json& j, const std::string& context, const char* key) {
  if (!j.contains(key)) throw ConfigError(context + ": missing key '" + key + "'");
  return j.at(key);
}

Eigen::VectorXd vector_from(const json& j, int expected, const std::string& context) {
  Eigen::VectorXd out(expected);
  if (j.is_number()) {
    out.setConstant(j.get<double>());
    return out;
  }
  const auto vals = j.get<std::vector<double>>();
  if (static_cast<int>(vals.size()) != expected)
    throw ConfigError(context + ": expected " + std::to_string(expected) + " entries");
  for (int i = 0; i < expected; ++i) out[i] = vals[i];
  return out;
}

Eigen::MatrixXd matrix_from(const json& j, int rows, int cols, const std::string& context) {
  const auto data = j.get<std::vector<std::vector<double>>>();
  if (static_cast<int>(data.size()) != rows)
    throw ConfigError(context + ": expected " + std::to_string(rows) + " rows");
  Eigen::MatrixXd out(rows, cols);
  for (int i = 0; i < rows; ++i) {
    if (static_cast<int>(data[i].size()) != cols)
      throw ConfigError(context + ": expected " + std::to_string(cols) + " columns");
    for (int k = 0; k < cols; ++k) out(i, k) = data[i][k];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Model configuration

struct ModelSpec {
  std::string family;
  // linear_gaussian
  std::optional<LinearGaussianSpec> lg;
  // univariate_sv
  double alpha = 0.0, sigma = 0.0, beta = 0.0;
  bool stationary_initial = false;
  // multivariate_sv
  Eigen::VectorXd msv_m, msv_phi;
  Eigen::MatrixXd msv_u;

  int horizon = 0;
  std::uint64_t obs_seed = 0;
  std::string observations_csv;

  Observations make_observations() const {
    if (!observations_csv.empty()) return load_observations_csv(observations_csv);
    Rng rng(mix_seed(obs_seed, 0x0b5));
    if (family == "linear_gaussian") return simulate_linear_gaussian(*lg, horizon, rng);
    if (family == "univariate_sv") return simulate_univariate_sv(alpha, sigma, beta, horizon, rng);
    return simulate_multivariate_sv(msv_m, msv_phi, msv_u, horizon, rng);
  }

  HmmModel build() const { return build_with(make_observations()); }

  HmmModel build_with(Observations ys) const {
    if (family == "linear_gaussian")
      return build_linear_gaussian(lg->m, lg->Sigma, lg->A, lg->B, lg->C, lg->D, std::move(ys));
    if (family == "univariate_sv")
      return stationary_initial
                 ? build_univariate_sv_stationary(alpha, sigma, beta, std::move(ys))
                 : build_univariate_sv(alpha, sigma, beta, std::move(ys));
    return build_multivariate_sv(msv_m, msv_phi, msv_u, std::move(ys));
  }
};

// Tridiagonal covariance from a diagonal and adjacent correlations.
Eigen::MatrixXd band_covariance(const Eigen::VectorXd& diag, const Eigen::VectorXd& rho) {
  const int d = static_cast<int>(diag.size());
  Eigen::MatrixXd u = diag.asDiagonal();
  for (int i = 0; i + 1 < d; ++i) {
    u(i, i + 1) = rho[i] * std::sqrt(diag[i] * diag[i + 1]);
    u(i + 1, i) = u(i, i + 1);
  }
  return u;
}

ModelSpec parse_model(const json& j) {
  check_keys(j, "model",
             {"family", "d", "alpha", "sigma", "beta", "stationary_initial", "m", "Sigma", "A",
              "B", "C", "D", "phi", "u_diag", "u_offdiag_rho", "U", "T", "obs_seed",
              "observations_csv"});
  ModelSpec spec;
  spec.family = require(j, "model", "family").get<std::string>();
  if (j.contains("T")) spec.horizon = j.at("T").get<int>();
  if (j.contains("obs_seed")) spec.obs_seed = j.at("obs_seed").get<std::uint64_t>();
  if (j.contains("observations_csv"))
    spec.observations_csv = j.at("observations_csv").get<std::string>();
  if (spec.observations_csv.empty() && spec.horizon < 1)
    throw ConfigError("model: need T (with obs_seed) or observations_csv");

  if (spec.family == "linear_gaussian") {
    const int d = require(j, "model", "d").get<int>();
    if (d < 1) throw ConfigError("model: d must be >= 1");
    LinearGaussianSpec lg;
    const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(d, d);
    lg.m = j.contains("m") ? vector_from(j.at("m"), d, "model.m") : Eigen::VectorXd::Zero(d);
    lg.Sigma = j.contains("Sigma") ? matrix_from(j.at("Sigma"), d, d, "model.Sigma") : eye;
    if (j.contains("A"))
      lg.A = matrix_from(j.at("A"), d, d, "model.A");
    else if (j.contains("alpha"))
      lg.A = alpha_power_matrix(d, j.at("alpha").get<double>());
    else
      throw ConfigError("model: linear_gaussian needs A or alpha");
    lg.B = j.contains("B") ? matrix_from(j.at("B"), d, d, "model.B") : eye;
    lg.C = j.contains("C") ? matrix_from(j.at("C"), d, d, "model.C") : eye;
    lg.D = j.contains("D") ? matrix_from(j.at("D"), d, d, "model.D") : eye;
    spec.lg = std::move(lg);
  } else if (spec.family == "univariate_sv") {
    spec.alpha = require(j, "model", "alpha").get<double>();
    spec.sigma = require(j, "model", "sigma").get<double>();
    spec.beta = require(j, "model", "beta").get<double>();
    if (j.contains("stationary_initial"))
      spec.stationary_initial = j.at("stationary_initial").get<bool>();
  } else if (spec.family == "multivariate_sv") {
    const int d = require(j, "model", "d").get<int>();
    spec.msv_m = j.contains("m") ? vector_from(j.at("m"), d, "model.m") : Eigen::VectorXd::Zero(d);
    spec.msv_phi = vector_from(require(j, "model", "phi"), d, "model.phi");
    if (j.contains("U")) {
      spec.msv_u = matrix_from(j.at("U"), d, d, "model.U");
    } else {
      const Eigen::VectorXd diag =
          vector_from(require(j, "model", "u_diag"), d, "model.u_diag");
      Eigen::VectorXd rho = Eigen::VectorXd::Zero(std::max(d - 1, 1));
      if (j.contains("u_offdiag_rho"))
        rho = vector_from(j.at("u_offdiag_rho"), d - 1, "model.u_offdiag_rho");
      spec.msv_u = band_covariance(diag, rho);
    }
  } else {
    throw ConfigError("model: unknown family '" + spec.family + "'");
  }
  return spec;
}

// ---------------------------------------------------------------------------
// Estimators

struct EstimatorConfig {
  std::string type;  // bpf, iapf, psi_apf, psi_star_apf, faapf, kalman
  int n = 1000;
  double kappa = 0.5;
  IapfConfig iapf;
  std::string psi_json_path;

  std::string label() const {
    if (type == "bpf") return "bpf(n=" + std::to_string(n) + ")";
    if (type == "iapf") return "iapf(n0=" + std::to_string(iapf.n0) + ")";
    return type;
  }
};

EstimatorConfig parse_estimator(const json& j) {
  check_keys(j, "estimator",
             {"type", "n", "kappa", "n0", "k", "tau", "n_max", "l_max", "psi_json"});
  EstimatorConfig e;
  e.type = require(j, "estimator", "type").get<std::string>();
  if (j.contains("n")) e.n = j.at("n").get<int>();
  if (j.contains("kappa")) e.kappa = j.at("kappa").get<double>();
  if (e.type == "iapf") {
    if (j.contains("n0")) e.iapf.n0 = j.at("n0").get<int>();
    if (j.contains("k")) e.iapf.k = j.at("k").get<int>();
    if (j.contains("tau")) e.iapf.tau = j.at("tau").get<double>();
    if (j.contains("n_max")) e.iapf.n_max = j.at("n_max").get<int>();
    if (j.contains("l_max")) e.iapf.l_max = j.at("l_max").get<int>();
    e.iapf.kappa = e.kappa;
  } else if (e.type == "psi_apf") {
    e.psi_json_path = require(j, "estimator", "psi_json").get<std::string>();
  } else if (e.type != "bpf" && e.type != "psi_star_apf" && e.type != "faapf" &&
             e.type != "kalman") {
    throw ConfigError("estimator: unknown type '" + e.type + "'");
  }
  return e;
}

struct EstimateRecord {
  double log_z = 0.0;
  int resampling_count = 0;
  int n_used = 0;
  int iterations = 0;
};

EstimateRecord run_estimator(const HmmModel& model, const EstimatorConfig& e,
                             std::uint64_t seed) {
  EstimateRecord rec;
  if (e.type == "kalman") {
    rec.log_z = kalman_log_likelihood(model);
    return rec;
  }
  if (e.type == "iapf") {
    IapfConfig cfg = e.iapf;
    cfg.seed = seed;
    const IapfResult res = run_iapf(model, cfg);
    rec.log_z = res.log_z;
    rec.n_used = res.n_final;
    rec.resampling_count = res.trace.iterations.back().resampling_count;
    rec.iterations = static_cast<int>(res.trace.iterations.size());
    return rec;
  }
  FilterConfig fc;
  fc.n_particles = e.n;
  fc.kappa = e.kappa;
  fc.seed = seed;
  FilterOutput out = [&] {
    if (e.type == "bpf") return run_bpf(model, fc);
    if (e.type == "psi_star_apf") return run_psi_apf(model, exact_psi_star_lgssm(model).psi, fc);
    if (e.type == "faapf") return run_psi_apf(model, fully_adapted_psi(model), fc);
    std::ifstream in(e.psi_json_path);
    if (!in) throw ConfigError("estimator: cannot open psi file " + e.psi_json_path);
    std::stringstream buf;
    buf << in.rdbuf();
    return run_psi_apf(model, PsiSequence::from_json(buf.str()), fc);
  }();
  rec.log_z = out.log_z;
  rec.resampling_count = out.resampling_count();
  rec.n_used = out.n_particles;
  return rec;
}

// ---------------------------------------------------------------------------
// Shared machinery

struct CommonOptions {
  std::string config_path;
  std::string out_path;
  std::optional<std::uint64_t> seed;
  std::optional<int> replicates;
  int threads = 1;
};

json load_config(const CommonOptions& opts) {
  if (opts.config_path.empty()) throw ConfigError("missing --config");
  std::ifstream in(opts.config_path);
  if (!in) throw ConfigError("cannot open config " + opts.config_path);
  try {
    return json::parse(in);
  } catch (const std::exception& e) {
    throw ConfigError(std::string("config parse failure: ") + e.what());
  }
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << content;
}

// Replicate fan-out over a worker pool; records come back in replicate
// order so files do not depend on scheduling.
std::vector<json> run_replicates(int count, int threads,
                                 const std::function<json(int)>& task) {
  std::vector<json> records(count);
  if (threads <= 1) {
    for (int r = 0; r < count; ++r) records[r] = task(r);
    return records;
  }
  std::atomic<int> next{0};
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(threads);
  for (int w = 0; w < threads; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (int r = next.fetch_add(1); r < count; r = next.fetch_add(1)) records[r] = task(r);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (const auto& err : errors)
    if (err) std::rethrow_exception(err);
  return records;
}

std::string to_jsonl(const std::vector<json>& records) {
  std::ostringstream out;
  for (const auto& r : records) out << r.dump() << "\n";
  return out.str();
}

double sample_sd(const std::vector<double>& v) {
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= v.size();
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / (v.size() - 1));
}

double sample_mean(const std::vector<double>& v) {
  double mean = 0.0;
  for (double x : v) mean += x;
  return mean / v.size();
}

// ---------------------------------------------------------------------------
// Subcommands

int cmd_filter(const CommonOptions& opts) {
  const json cfg = load_config(opts);
  check_keys(cfg, "config", {"model", "estimator", "seed"});
  const ModelSpec spec = parse_model(require(cfg, "config", "model"));
  const EstimatorConfig est = parse_estimator(require(cfg, "config", "estimator"));
  const std::uint64_t seed =
      opts.seed.value_or(cfg.contains("seed") ? cfg.at("seed").get<std::uint64_t>() : 0);

  const HmmModel model = spec.build();
  const auto t0 = std::chrono::steady_clock::now();
  const EstimateRecord rec = run_estimator(model, est, seed);
  const double wall_ms =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();

  json record{{"estimator", est.label()},
              {"N", rec.n_used},
              {"kappa", est.kappa},
              {"seed", seed},
              {"log_z", rec.log_z},
              {"resampling_count", rec.resampling_count}};
  json with_time = record;
  with_time["wall_time_ms"] = wall_ms;
  std::cout << with_time.dump() << "\n";
  if (!opts.out_path.empty()) write_file(opts.out_path, record.dump() + "\n");
  return 0;
}

int cmd_iapf(const CommonOptions& opts) {
  const json cfg = load_config(opts);
  check_keys(cfg, "config", {"model", "iapf", "seed", "psi_out"});
  const ModelSpec spec = parse_model(require(cfg, "config", "model"));
  json est_cfg = cfg.contains("iapf") ? cfg.at("iapf") : json::object();
  est_cfg["type"] = "iapf";
  const EstimatorConfig est = parse_estimator(est_cfg);

  IapfConfig run_cfg = est.iapf;
  run_cfg.seed = opts.seed.value_or(cfg.contains("seed") ? cfg.at("seed").get<std::uint64_t>() : 0);
  const HmmModel model = spec.build();
  const IapfResult result = run_iapf(model, run_cfg);

  json summary{{"log_z", result.log_z},
               {"n_final", result.n_final},
               {"iterations", static_cast<int>(result.trace.iterations.size())},
               {"termination", result.trace.termination}};
  std::cout << summary.dump() << "\n";
  if (!opts.out_path.empty())
    write_file(opts.out_path, trace_jsonl(result.trace, /*stable=*/true));
  if (cfg.contains("psi_out"))
    write_file(cfg.at("psi_out").get<std::string>(), result.psi.to_json());
  return 0;
}

json bench_summary(const std::vector<json>& records) {
  // estimator -> group key -> values
  std::map<std::string, std::map<std::string, std::vector<json>>> groups;
  for (const auto& r : records)
    groups[r.at("estimator").get<std::string>()][r.at("group").dump()].push_back(r);
  json out = json::array();
  for (const auto& [estimator, by_group] : groups) {
    for (const auto& [group, recs] : by_group) {
      std::vector<double> ratios, counts, ns, log_zs;
      bool have_oracle = true;
      for (const auto& r : recs) {
        log_zs.push_back(r.at("log_z").get<double>());
        counts.push_back(r.at("resampling_count").get<double>());
        ns.push_back(r.at("n_used").get<double>());
        if (r.contains("log_z_oracle") && !r.at("log_z_oracle").is_null())
          ratios.push_back(std::exp(r.at("log_z").get<double>() -
                                    r.at("log_z_oracle").get<double>()));
        else
          have_oracle = false;
      }
      json s{{"estimator", estimator},
             {"group", json::parse(group)},
             {"replicates", recs.size()},
             {"mean_log_z", sample_mean(log_zs)},
             {"mean_resampling_count", sample_mean(counts)},
             {"mean_n_used", sample_mean(ns)}};
      if (have_oracle && recs.size() > 1) {
        s["sd_z_ratio"] = sample_sd(ratios);
        s["mean_z_ratio"] = sample_mean(ratios);
      } else {
        s["sd_log_z"] = recs.size() > 1 ? json(sample_sd(log_zs)) : json();
      }
      out.push_back(s);
    }
  }
  return out;
}

int run_bench(const CommonOptions& opts, const json& cfg, const std::string& sweep_key) {
  check_keys(cfg, "config",
             {"model", "estimators", "replicates", "seed", sweep_key == "dims" ? "dims" : "alphas"});
  const json model_cfg = require(cfg, "config", "model");
  const std::uint64_t master_seed =
      opts.seed.value_or(cfg.contains("seed") ? cfg.at("seed").get<std::uint64_t>() : 0);
  const int replicates =
      opts.replicates.value_or(require(cfg, "config", "replicates").get<int>());

  std::vector<EstimatorConfig> estimators;
  for (const auto& e : require(cfg, "config", "estimators")) estimators.push_back(parse_estimator(e));

  struct Case {
    json group;
    ModelSpec spec;
  };
  std::vector<Case> cases;
  if (sweep_key == "dims") {
    for (const auto& dval : require(cfg, "config", "dims")) {
      json m = model_cfg;
      m["d"] = dval;
      cases.push_back({json{{"d", dval}}, parse_model(m)});
    }
  } else {
    // One observation record simulated from the base model; the model's
    // transition parameter sweeps over the listed values.
    const ModelSpec base = parse_model(model_cfg);
    const Observations ys = base.make_observations();
    for (const auto& aval : require(cfg, "config", "alphas")) {
      json m = model_cfg;
      m["alpha"] = aval;
      Case c{json{{"alpha", aval}}, parse_model(m)};
      cases.push_back(std::move(c));
    }
    // Shared data: rebuild each case against the base record.
    std::vector<json> records;
    for (const auto& c : cases) {
      const HmmModel model = c.spec.build_with(Observations(ys.matrix()));
      const double oracle =
          model.is_linear_gaussian() ? kalman_log_likelihood(model) : 0.0;
      const bool has_oracle = model.is_linear_gaussian();
      for (std::size_t e = 0; e < estimators.size(); ++e) {
        const auto est = estimators[e];
        const auto task = [&, est](int r) {
          const std::uint64_t seed =
              mix_seed(master_seed, (e << 40) ^ static_cast<std::uint64_t>(r) ^
                                        (static_cast<std::uint64_t>(
                                             std::hash<std::string>{}(c.group.dump()))
                                         << 8));
          const EstimateRecord rec = run_estimator(model, est, seed);
          json rj{{"group", c.group},        {"estimator", est.label()},
                  {"replicate", r},          {"seed", seed},
                  {"log_z", rec.log_z},      {"resampling_count", rec.resampling_count},
                  {"n_used", rec.n_used},    {"iterations", rec.iterations},
                  {"log_z_oracle", has_oracle ? json(oracle) : json()}};
          return rj;
        };
        for (const auto& r : run_replicates(replicates, opts.threads, task))
          records.push_back(r);
      }
    }
    const json summary = bench_summary(records);
    std::cout << summary.dump(2) << "\n";
    if (!opts.out_path.empty()) {
      write_file(opts.out_path, to_jsonl(records));
      write_file(opts.out_path + ".summary.json", summary.dump(2) + "\n");
    }
    return 0;
  }

  std::vector<json> records;
  for (const auto& c : cases) {
    const HmmModel model = c.spec.build();
    const bool has_oracle = model.is_linear_gaussian();
    const double oracle = has_oracle ? kalman_log_likelihood(model) : 0.0;
    for (std::size_t e = 0; e < estimators.size(); ++e) {
      const auto est = estimators[e];
      const auto task = [&, est](int r) {
        const std::uint64_t seed = mix_seed(mix_seed(master_seed, e * 1000003 + 17),
                                            static_cast<std::uint64_t>(r));
        const EstimateRecord rec = run_estimator(model, est, seed);
        json rj{{"group", c.group},        {"estimator", est.label()},
                {"replicate", r},          {"seed", seed},
                {"log_z", rec.log_z},      {"resampling_count", rec.resampling_count},
                {"n_used", rec.n_used},    {"iterations", rec.iterations},
                {"log_z_oracle", has_oracle ? json(oracle) : json()}};
        return rj;
      };
      for (const auto& r : run_replicates(replicates, opts.threads, task))
        records.push_back(r);
    }
  }
  const json summary = bench_summary(records);
  std::cout << summary.dump(2) << "\n";
  if (!opts.out_path.empty()) {
    write_file(opts.out_path, to_jsonl(records));
    write_file(opts.out_path + ".summary.json", summary.dump(2) + "\n");
  }
  return 0;
}

// Parameterized model kinds for PMMH.
struct PmmhProblem {
  std::function<HmmModel(const Eigen::VectorXd&)> builder;
  std::vector<Prior> priors;
  std::vector<std::string> names;
  Eigen::VectorXd theta0;
};

PmmhProblem make_pmmh_problem(const std::string& kind, const json& cfg,
                              const ModelSpec& base, Observations ys) {
  PmmhProblem prob;
  const auto ys_matrix = ys.matrix();
  if (kind == "linear_gaussian_alpha") {
    if (base.lg->m.size() != 1) throw ConfigError("pmmh: linear_gaussian_alpha needs d = 1");
    const LinearGaussianSpec lg = *base.lg;
    prob.builder = [lg, ys_matrix](const Eigen::VectorXd& theta) {
      return build_linear_gaussian(lg.m, lg.Sigma,
                                   Eigen::MatrixXd::Constant(1, 1, theta[0]), lg.B, lg.C, lg.D,
                                   Observations(ys_matrix));
    };
    prob.priors = {Prior::improper_flat()};
    prob.names = {"alpha"};
    prob.theta0 = Eigen::VectorXd::Constant(1, base.lg->A(0, 0));
  } else if (kind == "linear_gaussian_lower_A") {
    const LinearGaussianSpec lg = *base.lg;
    const int d = static_cast<int>(lg.m.size());
    const int p = d * (d + 1) / 2;
    prob.builder = [lg, ys_matrix, d](const Eigen::VectorXd& theta) {
      Eigen::MatrixXd a = Eigen::MatrixXd::Zero(d, d);
      int pos = 0;
      for (int i = 0; i < d; ++i)
        for (int j = 0; j <= i; ++j) a(i, j) = theta[pos++];
      return build_linear_gaussian(lg.m, lg.Sigma, a, lg.B, lg.C, lg.D, Observations(ys_matrix));
    };
    prob.priors.assign(p, Prior::uniform(-5.0, 5.0));
    prob.theta0.resize(p);
    int pos = 0;
    for (int i = 0; i < d; ++i)
      for (int j = 0; j <= i; ++j) {
        prob.names.push_back("A_" + std::to_string(i + 1) + std::to_string(j + 1));
        prob.theta0[pos++] = i == j ? 1.0 : 0.0;
      }
  } else if (kind == "univariate_sv") {
    const bool stationary = base.stationary_initial;
    prob.builder = [ys_matrix, stationary](const Eigen::VectorXd& theta) {
      return stationary ? build_univariate_sv_stationary(theta[0], theta[1], theta[2],
                                                         Observations(ys_matrix))
                        : build_univariate_sv(theta[0], theta[1], theta[2],
                                              Observations(ys_matrix));
    };
    // Chain moves on (alpha, sigma, beta); the printed priors sit on
    // sigma^2 and beta^2, applied through the square transform.
    prob.priors = {Prior::beta(20.0, 1.5), Prior::inverse_gamma_on_square(2.5, 0.025),
                   Prior::inverse_gamma_on_square(3.0, 1.0)};
    prob.names = {"alpha", "sigma", "beta"};
    prob.theta0.resize(3);
    prob.theta0 << base.alpha, base.sigma, base.beta;
  } else if (kind == "multivariate_sv") {
    const int d = static_cast<int>(base.msv_phi.size());
    const int p = 3 * d + (d - 1);
    prob.builder = [ys_matrix, d](const Eigen::VectorXd& theta) {
      const Eigen::VectorXd m = theta.head(d);
      const Eigen::VectorXd phi = theta.segment(d, d);
      const Eigen::VectorXd diag = theta.segment(2 * d, d);
      const Eigen::VectorXd rho = theta.tail(d - 1);
      return build_multivariate_sv(m, phi, band_covariance(diag, rho), Observations(ys_matrix));
    };
    // Inverse gamma with mean 0.2 and unit variance on the diagonal of U.
    const double ig_shape = 2.04, ig_scale = 0.208;
    for (int i = 0; i < d; ++i) {
      prob.priors.push_back(Prior::improper_flat());
      prob.names.push_back("m_" + std::to_string(i + 1));
    }
    for (int i = 0; i < d; ++i) {
      prob.priors.push_back(Prior::uniform(0.0, 1.0));
      prob.names.push_back("phi_" + std::to_string(i + 1));
    }
    for (int i = 0; i < d; ++i) {
      prob.priors.push_back(Prior::inverse_gamma(ig_shape, ig_scale));
      prob.names.push_back("u_" + std::to_string(i + 1));
    }
    for (int i = 0; i + 1 < d; ++i) {
      prob.priors.push_back(Prior::symmetric_triangular());
      prob.names.push_back("rho_" + std::to_string(i + 1));
    }
    prob.theta0.resize(p);
    prob.theta0.head(d) = base.msv_m;
    prob.theta0.segment(d, d) = base.msv_phi;
    prob.theta0.segment(2 * d, d) = base.msv_u.diagonal();
    for (int i = 0; i + 1 < d; ++i)
      prob.theta0[3 * d + i] =
          base.msv_u(i, i + 1) / std::sqrt(base.msv_u(i, i) * base.msv_u(i + 1, i + 1));
  } else {
    throw ConfigError("pmmh: unknown kind '" + kind + "'");
  }
  if (cfg.contains("theta0")) {
    const auto t0 = cfg.at("theta0").get<std::vector<double>>();
    if (static_cast<int>(t0.size()) != prob.theta0.size())
      throw ConfigError("pmmh: theta0 length mismatch");
    for (std::size_t i = 0; i < t0.size(); ++i) prob.theta0[static_cast<int>(i)] = t0[i];
  }
  return prob;
}

int cmd_pmmh(const CommonOptions& opts) {
  const json cfg = load_config(opts);
  check_keys(cfg, "config",
             {"model", "kind", "estimator", "chain_length", "proposal_sd", "theta0", "seed"});
  const ModelSpec spec = parse_model(require(cfg, "config", "model"));
  const std::string kind = require(cfg, "config", "kind").get<std::string>();
  PmmhProblem prob = make_pmmh_problem(kind, cfg, spec, spec.make_observations());

  const EstimatorConfig est = parse_estimator(require(cfg, "config", "estimator"));
  MhConfig mh;
  mh.chain_length = require(cfg, "config", "chain_length").get<int>();
  const int p = static_cast<int>(prob.theta0.size());
  mh.proposal_sd = vector_from(require(cfg, "config", "proposal_sd"), p, "proposal_sd");
  mh.seed = opts.seed.value_or(cfg.contains("seed") ? cfg.at("seed").get<std::uint64_t>() : 0);
  if (est.type == "kalman")
    mh.estimator.kind = EstimatorSpec::Kind::kKalman;
  else if (est.type == "bpf") {
    mh.estimator.kind = EstimatorSpec::Kind::kBpf;
    mh.estimator.n_particles = est.n;
    mh.estimator.kappa = est.kappa;
  } else if (est.type == "iapf") {
    mh.estimator.kind = EstimatorSpec::Kind::kIapf;
    mh.estimator.iapf = est.iapf;
  } else {
    throw ConfigError("pmmh: estimator must be kalman, bpf or iapf");
  }

  const Chain chain = run_pmmh(prob.builder, prob.priors, prob.theta0, mh);

  // One CSV row per step.
  std::ostringstream csv;
  csv << "step";
  for (const auto& name : prob.names) csv << "," << name;
  csv << ",log_z\n";
  csv.precision(17);
  for (int step = 0; step < mh.chain_length; ++step) {
    csv << step;
    for (int c = 0; c < p; ++c) csv << "," << chain.samples(step, c);
    csv << "," << chain.log_z_trace[step] << "\n";
  }

  json diag{{"chain_length", mh.chain_length},
            {"estimator", est.label()},
            {"estimator_calls", chain.estimator_calls},
            {"estimator_failures", chain.estimator_failures}};
  json per_comp = json::array();
  const int burn = std::min(mh.chain_length / 5, 5000);
  for (int c = 0; c < p; ++c) {
    json entry{{"name", prob.names[c]},
               {"acceptance_rate", chain.acceptance_rate(c)}};
    const Eigen::VectorXd tail = chain.samples.col(c).tail(mh.chain_length - burn);
    try {
      const double t = iact(tail);
      entry["iact"] = t;
      entry["adjusted_sample_size"] = tail.size() / t;
    } catch (const std::exception&) {
      entry["iact"] = nullptr;
    }
    per_comp.push_back(entry);
  }
  diag["components"] = per_comp;

  std::cout << diag.dump(2) << "\n";
  if (!opts.out_path.empty()) {
    write_file(opts.out_path, csv.str());
    write_file(opts.out_path + ".diagnostics.json", diag.dump(2) + "\n");
  }
  return 0;
}

int cmd_profile(const CommonOptions& opts) {
  const json cfg = load_config(opts);
  check_keys(cfg, "config", {"model", "points", "estimators", "replicates", "seed"});
  const ModelSpec base = parse_model(require(cfg, "config", "model"));
  const Observations ys = base.make_observations();
  const std::uint64_t master_seed =
      opts.seed.value_or(cfg.contains("seed") ? cfg.at("seed").get<std::uint64_t>() : 0);
  const int replicates =
      opts.replicates.value_or(require(cfg, "config", "replicates").get<int>());

  std::vector<EstimatorConfig> estimators;
  for (const auto& e : require(cfg, "config", "estimators")) estimators.push_back(parse_estimator(e));

  std::vector<json> records;
  int point_index = 0;
  for (const auto& point : require(cfg, "config", "points")) {
    json merged = cfg.at("model");
    for (auto it = point.begin(); it != point.end(); ++it) merged[it.key()] = it.value();
    const ModelSpec spec = parse_model(merged);
    const HmmModel model = spec.build_with(Observations(ys.matrix()));
    for (std::size_t e = 0; e < estimators.size(); ++e) {
      const auto est = estimators[e];
      const auto task = [&, est, point_index](int r) {
        const std::uint64_t seed =
            mix_seed(mix_seed(master_seed, point_index * 7919 + e), static_cast<std::uint64_t>(r));
        const EstimateRecord rec = run_estimator(model, est, seed);
        return json{{"point", point},
                    {"estimator", est.label()},
                    {"replicate", r},
                    {"seed", seed},
                    {"log_z", rec.log_z},
                    {"n_used", rec.n_used}};
      };
      for (const auto& r : run_replicates(replicates, opts.threads, task)) records.push_back(r);
    }
    ++point_index;
  }
  std::cout << "profiled " << records.size() << " runs\n";
  if (!opts.out_path.empty()) write_file(opts.out_path, to_jsonl(records));
  return 0;
}

// Price series to mean-corrected log returns, as used to preprocess
// exchange-rate data before filtering. One numeric column in, one out.
int cmd_prep_returns(const std::string& in_path, const std::string& out_path, double scale) {
  const Observations prices = load_observations_csv(in_path);
  if (prices.dim() != 1) throw ConfigError("prep-returns: expected a single price column");
  const Eigen::VectorXd returns =
      mean_corrected_log_returns(prices.matrix().col(0), scale);
  std::ostringstream out;
  out.precision(17);
  out << "y\n";
  for (int i = 0; i < returns.size(); ++i) out << returns[i] << "\n";
  write_file(out_path, out.str());
  std::cout << "wrote " << returns.size() << " returns to " << out_path << "\n";
  return 0;
}

int cmd_smooth(const CommonOptions& opts) {
  const json cfg = load_config(opts);
  check_keys(cfg, "config", {"model", "iapf", "n", "kappa", "seed"});
  const ModelSpec spec = parse_model(require(cfg, "config", "model"));
  const std::uint64_t seed =
      opts.seed.value_or(cfg.contains("seed") ? cfg.at("seed").get<std::uint64_t>() : 0);
  const HmmModel model = spec.build();

  json iapf_cfg = cfg.contains("iapf") ? cfg.at("iapf") : json::object();
  iapf_cfg["type"] = "iapf";
  IapfConfig run_cfg = parse_estimator(iapf_cfg).iapf;
  run_cfg.seed = mix_seed(seed, 1);
  const IapfResult pass = run_iapf(model, run_cfg);

  FilterConfig fc;
  fc.n_particles = cfg.contains("n") ? cfg.at("n").get<int>() : 1000;
  fc.kappa = cfg.contains("kappa") ? cfg.at("kappa").get<double>() : 0.5;
  fc.seed = mix_seed(seed, 2);
  fc.record_ancestry = true;
  const FilterOutput out = run_psi_apf(model, pass.psi, fc);
  const Eigen::MatrixXd means = smoothed_coordinate_means(out);

  json result{{"log_z", out.log_z}, {"N", fc.n_particles}};
  json per_t = json::array();
  std::optional<KalmanResult> kalman;
  if (model.is_linear_gaussian()) kalman = kalman_filter_smoother(model);
  for (int t = 0; t < model.horizon(); ++t) {
    json entry{{"t", t}};
    entry["mean"] = std::vector<double>(means.col(t).data(), means.col(t).data() + means.rows());
    if (kalman)
      entry["kalman_mean"] = std::vector<double>(
          kalman->smoothed_mean[t].data(),
          kalman->smoothed_mean[t].data() + kalman->smoothed_mean[t].size());
    per_t.push_back(entry);
  }
  result["smoothed"] = per_t;
  std::cout << "smoothed " << model.horizon() << " steps, log_z " << out.log_z << "\n";
  if (!opts.out_path.empty()) write_file(opts.out_path, result.dump(2) + "\n");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Twisted particle filtering experiments"};
  app.require_subcommand(1);

  CommonOptions opts;
  std::uint64_t seed_flag = 0;
  int replicates_flag = 0;

  const auto add_common = [&](CLI::App* cmd, bool with_replicates) {
    cmd->add_option("--config", opts.config_path, "JSON config file")
        ->envname("IAPF_CONFIG")
        ->required();
    cmd->add_option("--out", opts.out_path, "output path (records; summaries get a suffix)")
        ->envname("IAPF_OUT");
    cmd->add_option("--seed", seed_flag, "master seed override")->envname("IAPF_SEED");
    cmd->add_option("--threads", opts.threads, "worker threads for replicates")
        ->envname("IAPF_THREADS");
    if (with_replicates)
      cmd->add_option("--replicates", replicates_flag, "replicate count override")
          ->envname("IAPF_REPLICATES");
  };

  CLI::App* filter = app.add_subcommand("filter", "single estimate of the marginal likelihood");
  add_common(filter, false);
  CLI::App* iapf_cmd = app.add_subcommand("iapf", "iterated filter with trace output");
  add_common(iapf_cmd, false);
  CLI::App* bench_dim = app.add_subcommand("bench-dim", "replicate study across dimensions");
  add_common(bench_dim, true);
  CLI::App* bench_param =
      app.add_subcommand("bench-param", "replicate study across transition parameters");
  add_common(bench_param, true);
  CLI::App* pmmh = app.add_subcommand("pmmh", "particle marginal Metropolis-Hastings chain");
  add_common(pmmh, false);
  CLI::App* profile = app.add_subcommand("profile", "likelihood estimates around given points");
  add_common(profile, true);
  CLI::App* smooth = app.add_subcommand("smooth", "smoothing means from one iterated pass");
  add_common(smooth, false);

  std::string prices_path, returns_path;
  double returns_scale = 1.0;
  CLI::App* prep = app.add_subcommand(
      "prep-returns", "convert a price series to mean-corrected log returns");
  prep->add_option("--in", prices_path, "price series CSV (one column)")->required();
  prep->add_option("--out", returns_path, "output CSV")->required();
  prep->add_option("--scale", returns_scale, "multiplier, e.g. 100 for percent returns");

  CLI11_PARSE(app, argc, argv);

  for (CLI::App* cmd : {filter, iapf_cmd, bench_dim, bench_param, pmmh, profile, smooth}) {
    if (cmd->parsed()) {
      if (cmd->count("--seed")) opts.seed = seed_flag;
      const CLI::Option* rep = cmd->get_option_no_throw("--replicates");
      if (rep && rep->count()) opts.replicates = replicates_flag;
    }
  }

  try {
    if (prep->parsed()) return cmd_prep_returns(prices_path, returns_path, returns_scale);
    if (filter->parsed()) return cmd_filter(opts);
    if (iapf_cmd->parsed()) return cmd_iapf(opts);
    if (bench_dim->parsed()) return run_bench(opts, load_config(opts), "dims");
    if (bench_param->parsed()) return run_bench(opts, load_config(opts), "alphas");
    if (pmmh->parsed()) return cmd_pmmh(opts);
    if (profile->parsed()) return cmd_profile(opts);
    if (smooth->parsed()) return cmd_smooth(opts);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 3;
  }
  return 2;
}
