#include "iapf/grid.hpp"

#include <cmath>
#include <limits>

namespace iapf {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

void require_scalar_state(const HmmModel& model, const char* where) {
  if (model.dim_state() != 1)
    throw std::invalid_argument(std::string(where) + ": grid oracles need a scalar state");
}

// F(i, j) = log f(x_i, x_j); the kernel is time-homogeneous so one matrix
// serves every step.
Eigen::MatrixXd log_transition_matrix(const HmmModel& model, const Eigen::VectorXd& nodes) {
  const int n = static_cast<int>(nodes.size());
  Eigen::MatrixXd f(n, n);
  Eigen::VectorXd point(1);
  for (int i = 0; i < n; ++i) {
    point[0] = nodes[i];
    const auto comps = model.transition().components(point);
    for (int j = 0; j < n; ++j) {
      double term = kNegInf;
      if (comps.size() == 1) {
        const double b = comps[0].cov.is_diagonal() ? comps[0].cov.diag()[0]
                                                    : comps[0].cov.matrix()(0, 0);
        const double r = nodes[j] - comps[0].mean[0];
        term = -0.5 * (1.8378770664093454836 + std::log(b) + r * r / b);
      } else {
        Eigen::VectorXd parts(comps.size());
        Eigen::VectorXd xj(1);
        xj[0] = nodes[j];
        for (std::size_t k = 0; k < comps.size(); ++k)
          parts[static_cast<int>(k)] =
              comps[k].log_weight + log_gaussian_density(xj, comps[k]);
        term = log_sum_exp(parts);
      }
      f(i, j) = term;
    }
  }
  return f;
}

Eigen::VectorXd log_initial_on_grid(const HmmModel& model, const Eigen::VectorXd& nodes) {
  const int n = static_cast<int>(nodes.size());
  Eigen::VectorXd out(n);
  Eigen::VectorXd point(1);
  for (int j = 0; j < n; ++j) {
    point[0] = nodes[j];
    out[j] = model.log_initial_density(point);
  }
  return out;
}

Eigen::MatrixXd log_g_on_grid(const HmmModel& model, const Eigen::VectorXd& nodes) {
  const int n = static_cast<int>(nodes.size());
  const int horizon = model.horizon();
  Eigen::MatrixXd out(horizon, n);
  Eigen::VectorXd point(1);
  for (int t = 0; t < horizon; ++t)
    for (int j = 0; j < n; ++j) {
      point[0] = nodes[j];
      out(t, j) = model.log_g(t, point);
    }
  return out;
}

struct Marginals {
  Eigen::MatrixXd log_pred;    // horizon x n, normalized predictive at each t
  Eigen::MatrixXd log_smooth;  // horizon x n, normalized smoothing marginal
};

// Forward-backward quadrature for a Markov chain with initial log density
// lmu, step matrices given through step_fn(t) (log transition into step t)
// and per-step log potentials. Marginals are normalized against the
// trapezoid weights.
Marginals forward_backward(int horizon, const Eigen::VectorXd& lw, const Eigen::VectorXd& lmu,
                           const Eigen::MatrixXd& lpot,
                           const std::function<Eigen::MatrixXd(int)>& step_fn) {
  const int n = static_cast<int>(lw.size());
  Marginals out;
  out.log_pred.resize(horizon, n);
  out.log_smooth.resize(horizon, n);

  Eigen::VectorXd fwd = lmu;
  fwd.array() -= log_sum_exp(fwd + lw);
  out.log_pred.row(0) = fwd.transpose();
  for (int t = 1; t < horizon; ++t) {
    const Eigen::MatrixXd step = step_fn(t);
    const Eigen::VectorXd u = fwd + lpot.row(t - 1).transpose() + lw;
    Eigen::VectorXd next(n);
    for (int j = 0; j < n; ++j) next[j] = log_sum_exp(u + step.col(j));
    next.array() -= log_sum_exp(next + lw);
    fwd = std::move(next);
    out.log_pred.row(t) = fwd.transpose();
  }

  Eigen::MatrixXd bwd(horizon, n);
  bwd.row(horizon - 1) = lpot.row(horizon - 1);
  for (int t = horizon - 2; t >= 0; --t) {
    const Eigen::MatrixXd step = step_fn(t + 1);
    const Eigen::VectorXd v = bwd.row(t + 1).transpose() + lw;
    Eigen::VectorXd cur(n);
    for (int j = 0; j < n; ++j)
      cur[j] = lpot(t, j) + log_sum_exp(v + step.row(j).transpose());
    cur.array() -= cur.maxCoeff();
    bwd.row(t) = cur.transpose();
  }

  for (int t = 0; t < horizon; ++t) {
    Eigen::VectorXd sm = out.log_pred.row(t).transpose() + bwd.row(t).transpose();
    sm.array() -= log_sum_exp(sm + lw);
    out.log_smooth.row(t) = sm.transpose();
  }
  return out;
}

}  // namespace

Grid1D::Grid1D(double lo_, double hi_, int n_nodes_) : lo(lo_), hi(hi_), n_nodes(n_nodes_) {
  if (!(lo < hi)) throw std::invalid_argument("grid: need lo < hi");
  if (n_nodes < 16) throw std::invalid_argument("grid: need at least 16 nodes");
}

Eigen::VectorXd Grid1D::nodes() const {
  return Eigen::VectorXd::LinSpaced(n_nodes, lo, hi);
}

Eigen::VectorXd Grid1D::weights() const {
  Eigen::VectorXd w = Eigen::VectorXd::Constant(n_nodes, spacing());
  w[0] *= 0.5;
  w[n_nodes - 1] *= 0.5;
  return w;
}

Grid1D default_grid_for(const HmmModel& model, int n_nodes) {
  require_scalar_state(model, "default_grid_for");
  double mean = 0.0, second = 0.0;
  for (const auto& c : model.initial()) {
    const double w = std::exp(c.log_weight);
    const double v = c.cov.is_diagonal() ? c.cov.diag()[0] : c.cov.matrix()(0, 0);
    mean += w * c.mean[0];
    second += w * (v + c.mean[0] * c.mean[0]);
  }
  double var = std::max(second - mean * mean, 1e-12);

  double lo = mean - 10.0 * std::sqrt(var);
  double hi = mean + 10.0 * std::sqrt(var);
  Eigen::VectorXd point(1);
  for (int t = 1; t < model.horizon(); ++t) {
    const auto moments = [&](double x) {
      point[0] = x;
      const auto comps = model.transition().components(point);
      double m = 0.0, s = 0.0;
      for (const auto& c : comps) {
        const double w = std::exp(c.log_weight);
        const double v = c.cov.is_diagonal() ? c.cov.diag()[0] : c.cov.matrix()(0, 0);
        m += w * c.mean[0];
        s += w * (v + c.mean[0] * c.mean[0]);
      }
      return std::pair<double, double>(m, std::max(s - m * m, 0.0));
    };
    const auto [m_next, v_step] = moments(mean);
    const double delta = 1e-4 * (1.0 + std::sqrt(var));
    const double slope = (moments(mean + delta).first - m_next) / delta;
    var = slope * slope * var + v_step;
    mean = m_next;
    lo = std::min(lo, mean - 10.0 * std::sqrt(var));
    hi = std::max(hi, mean + 10.0 * std::sqrt(var));
  }
  return Grid1D(lo, hi, n_nodes);
}

double grid_log_likelihood_1d(const HmmModel& model, const Grid1D& grid) {
  require_scalar_state(model, "grid_log_likelihood_1d");
  const Eigen::VectorXd x = grid.nodes();
  const Eigen::VectorXd lw = grid.weights().array().log();
  const Eigen::VectorXd lmu = log_initial_on_grid(model, x);
  if (std::abs(std::exp(log_sum_exp(lmu + lw)) - 1.0) > 1e-4)
    throw std::runtime_error("grid: too coarse or too narrow to normalize the initial density");
  const Eigen::MatrixXd lg = log_g_on_grid(model, x);
  const Eigen::MatrixXd f = log_transition_matrix(model, x);

  Eigen::VectorXd la = lmu + lg.row(0).transpose();
  double acc = 0.0;
  for (int t = 1; t < model.horizon(); ++t) {
    const double c = la.maxCoeff();
    la.array() -= c;
    acc += c;
    const Eigen::VectorXd u = la + lw;
    Eigen::VectorXd next(x.size());
    for (int j = 0; j < x.size(); ++j) next[j] = log_sum_exp(u + f.col(j));
    la = next + lg.row(t).transpose();
  }
  return acc + log_sum_exp(la + lw);
}

GridPsiStar grid_backward_psi_star_1d(const HmmModel& model, const Grid1D& grid) {
  require_scalar_state(model, "grid_backward_psi_star_1d");
  const int horizon = model.horizon();
  const Eigen::VectorXd x = grid.nodes();
  const Eigen::VectorXd lw = grid.weights().array().log();
  const Eigen::MatrixXd lg = log_g_on_grid(model, x);
  const Eigen::MatrixXd f = log_transition_matrix(model, x);

  GridPsiStar out;
  out.log_values.resize(horizon, x.size());
  out.log_values.row(horizon - 1) = lg.row(horizon - 1);
  for (int t = horizon - 2; t >= 0; --t) {
    const Eigen::VectorXd v = out.log_values.row(t + 1).transpose() + lw;
    for (int j = 0; j < x.size(); ++j)
      out.log_values(t, j) = lg(t, j) + log_sum_exp(v + f.row(j).transpose());
  }
  const Eigen::VectorXd lmu = log_initial_on_grid(model, x);
  out.log_psi_tilde0 = log_sum_exp(lmu + out.log_values.row(0).transpose() + lw);
  return out;
}

GridVariance grid_asymptotic_variance_1d(const HmmModel& model, const PsiSequence& psi,
                                         const Grid1D& grid) {
  require_scalar_state(model, "grid_asymptotic_variance_1d");
  const int horizon = model.horizon();
  const int n = grid.n_nodes;
  const Eigen::VectorXd x = grid.nodes();
  const Eigen::VectorXd lw = grid.weights().array().log();
  const TwistedModel tm(model, psi);

  Eigen::MatrixXd lpsi(horizon, n), lpsi_tilde(horizon, n), lpot(horizon, n);
  Eigen::VectorXd point(1);
  for (int t = 0; t < horizon; ++t)
    for (int j = 0; j < n; ++j) {
      point[0] = x[j];
      lpsi(t, j) = psi_eval_log(psi[t], point);
      lpsi_tilde(t, j) = tm.log_psi_tilde(t, point);
      lpot(t, j) = tm.log_g_twisted(t, point);
      if (!std::isfinite(lpsi(t, j)))
        throw std::runtime_error("grid variance: psi vanishes on the grid");
    }

  Eigen::VectorXd lmu_psi(n);
  for (int j = 0; j < n; ++j) {
    point[0] = x[j];
    lmu_psi[j] = tm.log_initial_density(point);
  }

  const Eigen::MatrixXd f = log_transition_matrix(model, x);
  const auto twisted_step = [&](int t) {
    Eigen::MatrixXd step = f;
    step.rowwise() += lpsi.row(t);
    step.colwise() -= lpsi_tilde.row(t - 1).transpose();
    return step;
  };

  const Marginals marg = forward_backward(horizon, lw, lmu_psi, lpot, twisted_step);
  const GridPsiStar star = grid_backward_psi_star_1d(model, grid);

  GridVariance out;
  for (int t = 0; t < horizon; ++t) {
    const Eigen::VectorXd pred = marg.log_pred.row(t).transpose();
    const Eigen::VectorXd smooth = marg.log_smooth.row(t).transpose();
    const Eigen::VectorXd ls = star.log_values.row(t).transpose();
    const Eigen::VectorXd lp = lpsi.row(t).transpose();
    const double ratio_smooth = log_sum_exp(lw + smooth + ls - lp);
    const double pred_psi = log_sum_exp(lw + pred + lp);
    const double pred_star = log_sum_exp(lw + pred + ls);
    out.value += std::exp(ratio_smooth + pred_psi - pred_star) - 1.0;
    out.chi_square_form += std::exp(log_sum_exp(lw + 2.0 * smooth - pred)) - 1.0;
  }
  return out;
}

double grid_bpf_asymptotic_variance_1d(const HmmModel& model, const Grid1D& grid) {
  require_scalar_state(model, "grid_bpf_asymptotic_variance_1d");
  const int horizon = model.horizon();
  const Eigen::VectorXd x = grid.nodes();
  const Eigen::VectorXd lw = grid.weights().array().log();
  const Eigen::VectorXd lmu = log_initial_on_grid(model, x);
  const Eigen::MatrixXd lpot = log_g_on_grid(model, x);
  const Eigen::MatrixXd f = log_transition_matrix(model, x);

  const Marginals marg =
      forward_backward(horizon, lw, lmu, lpot, [&](int) { return f; });
  const GridPsiStar star = grid_backward_psi_star_1d(model, grid);

  double total = 0.0;
  for (int t = 0; t < horizon; ++t) {
    const Eigen::VectorXd ls = star.log_values.row(t).transpose();
    const double smooth = log_sum_exp(lw + marg.log_smooth.row(t).transpose() + ls);
    const double pred = log_sum_exp(lw + marg.log_pred.row(t).transpose() + ls);
    total += std::exp(smooth - pred) - 1.0;
  }
  return total;
}

}  // namespace iapf
