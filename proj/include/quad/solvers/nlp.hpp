#pragma once

#include <Eigen/Sparse>
#include <functional>
#include <vector>

#include "quad/types.hpp"

namespace quad {

using SparseTriplets = std::vector<Eigen::Triplet<double>>;

// General nonlinear program
//   min f(x)  s.t.  c_lower <= c(x) <= c_upper,  lower <= x <= upper
// Equality rows use c_lower == c_upper. Rows are expected pre-scaled so that
// a unit violation is comparable across rows; x_scale preconditions the
// inner quasi-Newton iteration.
struct NlpProblem {
  int n = 0;
  int m = 0;
  VecX lower, upper;        // size n; +-inf allowed; lower == upper freezes
  VecX x_scale;             // size n (empty = ones)
  VecX c_lower, c_upper;    // size m

  std::function<double(const VecX&)> objective;
  std::function<VecX(const VecX&)> gradient;
  std::function<void(const VecX&, VecX&)> constraints;
  std::function<void(const VecX&, SparseTriplets&)> jacobian;  // fixed pattern
};

struct NlpSettings {
  double tol_feas = 1e-5;
  double tol_opt = 1e-4;
  int max_outer = 30;
  int max_inner = 600;
  double mu0 = 10.0;
  double mu_max = 1e8;
  double mu_growth = 10.0;
  double viol_decrease = 0.25;  // required per-outer violation drop
  // optional exit: feasible and the objective stopped moving
  double tol_cost_rel = 0.0;
  int lbfgs_memory = 15;
  bool polish_feasibility = true;
  bool refine_stationarity = true;
  int max_refine_cg = 80;
  bool verbose = false;
};

enum class NlpStatus { kOptimal, kMaxIter, kStalled };

struct NlpWarmStart {
  VecX lambda_eq;    // m
  VecX lambda_up;    // m, >= 0
  VecX lambda_lo;    // m, >= 0
  double mu = 0.0;
};

struct NlpResult {
  NlpStatus status = NlpStatus::kMaxIter;
  VecX x;
  double objective = 0.0;
  double max_violation = 0.0;
  double projected_gradient = 0.0;
  int outer_iterations = 0;
  int inner_iterations = 0;
  NlpWarmStart multipliers;
  std::vector<double> violation_trace;  // per outer iteration
};

NlpResult solve_nlp(const NlpProblem& problem, const VecX& x0,
                    const NlpSettings& settings = {},
                    const NlpWarmStart* warm = nullptr);

// Compares the callback gradient/Jacobian against central finite differences.
struct DerivativeReport {
  double max_gradient_error = 0.0;
  double max_jacobian_error = 0.0;
  std::vector<int> bad_rows;
};

DerivativeReport check_derivatives(const NlpProblem& problem, const VecX& x,
                                   double step = 1e-6, double tol = 1e-4);

}  // namespace quad
