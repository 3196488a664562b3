#pragma once

#include "quad/types.hpp"

namespace quad {

// Dense convex QP: min 1/2 x'Px + q'x  s.t.  lower <= Ax <= upper.
// Equality rows use lower == upper.
struct QpProblem {
  MatX P;
  VecX q;
  MatX A;
  VecX lower, upper;

  int n() const { return static_cast<int>(q.size()); }
  int m() const { return static_cast<int>(lower.size()); }
};

enum class QpStatus { kOptimal, kMaxIter, kInfeasible };

struct QpSettings {
  double tol = 1e-8;
  int max_iter = 4000;
  double sigma = 1e-6;
  double rho = 0.1;
  double relaxation = 1.6;
  bool polish = true;
};

struct QpWarmStart {
  VecX x, y;
};

struct QpResult {
  QpStatus status = QpStatus::kMaxIter;
  VecX x, y, z;
  int iterations = 0;
  double objective = 0.0;
  double kkt_stationarity = 0.0;
  double kkt_primal = 0.0;
  double kkt_complementarity = 0.0;
};

QpResult solve_qp(const QpProblem& problem, const QpSettings& settings = {},
                  const QpWarmStart* warm = nullptr);

}  // namespace quad
