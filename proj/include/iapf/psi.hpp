#pragma once

#include <string>
#include <vector>

#include "iapf/gaussian.hpp"

namespace iapf {

// A constant-plus-Gaussian-mixture twisting function
//   psi(x) = exp(log_scale) * (C + sum_k c_k N(x; a_k, b_k)),
// strictly positive by construction (C >= 0, coefficients c_k > 0, and
// C > 0 or at least one component). The explicit log-scale lets the exact
// backward recursion be represented without underflow; all filter
// consumers are scale-invariant.
class PsiFunction {
 public:
  PsiFunction(int dim, double constant, std::vector<GaussianComponent> components,
              double log_scale = 0.0);
  static PsiFunction from_log_constant(int dim, double log_constant,
                                       std::vector<GaussianComponent> components,
                                       double log_scale = 0.0);
  static PsiFunction constant(int dim, double value);
  static PsiFunction one(int dim) { return constant(dim, 1.0); }

  int dim() const { return dim_; }
  bool is_constant() const { return components_.empty(); }
  double log_constant() const { return log_constant_; }  // log C, -inf when C = 0
  double log_scale() const { return log_scale_; }
  const std::vector<GaussianComponent>& components() const { return components_; }

  PsiFunction rescaled(double log_factor) const;

 private:
  int dim_;
  double log_constant_;
  double log_scale_;
  std::vector<GaussianComponent> components_;
};

// log psi(x), computed log-safely.
double psi_eval_log(const PsiFunction& psi, const Eigen::VectorXd& x);

// log of  int N(u; comp) psi(u) du
//       = log_scale + log(C + sum_k c_k N(comp.mean; a_k, comp.cov + b_k)).
double log_component_psi_integral(const GaussianComponent& comp, const PsiFunction& psi);
double component_psi_integral(const GaussianComponent& comp, const PsiFunction& psi);

// The twisting sequence psi_1..psi_T; consumers treat the implicit
// psi_{T+1} as the unit function.
class PsiSequence {
 public:
  explicit PsiSequence(std::vector<PsiFunction> psis);
  static PsiSequence all_constant(int horizon, int dim, double value = 1.0);

  int size() const { return static_cast<int>(psis_.size()); }
  int dim() const { return psis_.front().dim(); }
  const PsiFunction& operator[](int t) const { return psis_[t]; }

  // Multiply each psi_t by an arbitrary positive factor (as log values);
  // filter output is invariant to this.
  PsiSequence rescaled(const std::vector<double>& log_factors) const;

  std::string to_json() const;
  static PsiSequence from_json(const std::string& text);

 private:
  std::vector<PsiFunction> psis_;
};

}  // namespace iapf
