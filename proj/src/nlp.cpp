#include "quad/solvers/nlp.hpp"

#include <Eigen/SparseCholesky>
#include <cmath>
#include <cstdio>
#include <deque>
#include <limits>

namespace quad {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

using SpMat = Eigen::SparseMatrix<double>;

struct Multipliers {
  VecX eq, up, lo;
};

// violation vector: positive entries are infeasibilities
double max_violation(const NlpProblem& p, const VecX& c) {
  double v = 0.0;
  for (int i = 0; i < p.m; ++i) {
    if (p.c_upper[i] != kInf) v = std::max(v, c[i] - p.c_upper[i]);
    if (p.c_lower[i] != -kInf) v = std::max(v, p.c_lower[i] - c[i]);
  }
  return v;
}

class AugmentedLagrangian {
 public:
  AugmentedLagrangian(const NlpProblem& p, const Multipliers& lam, double mu)
      : p_(p), lam_(lam), mu_(mu) {}

  double value(const VecX& x, VecX* c_out = nullptr) const {
    VecX c(p_.m);
    p_.constraints(x, c);
    if (c_out) *c_out = c;
    double L = p_.objective(x);
    for (int i = 0; i < p_.m; ++i) {
      if (p_.c_lower[i] == p_.c_upper[i]) {
        const double r = c[i] - p_.c_lower[i];
        L += lam_.eq[i] * r + 0.5 * mu_ * r * r;
      } else {
        if (p_.c_upper[i] != kInf) {
          const double t = std::max(0.0, lam_.up[i] + mu_ * (c[i] - p_.c_upper[i]));
          L += (t * t - lam_.up[i] * lam_.up[i]) / (2.0 * mu_);
        }
        if (p_.c_lower[i] != -kInf) {
          const double t = std::max(0.0, lam_.lo[i] + mu_ * (p_.c_lower[i] - c[i]));
          L += (t * t - lam_.lo[i] * lam_.lo[i]) / (2.0 * mu_);
        }
      }
    }
    return L;
  }

  VecX gradient(const VecX& x) const {
    VecX c(p_.m);
    p_.constraints(x, c);
    SparseTriplets& trips = jac_buffer_;
    VecX w = VecX::Zero(p_.m);
    for (int i = 0; i < p_.m; ++i) {
      if (p_.c_lower[i] == p_.c_upper[i]) {
        w[i] = lam_.eq[i] + mu_ * (c[i] - p_.c_lower[i]);
      } else {
        if (p_.c_upper[i] != kInf) {
          w[i] += std::max(0.0, lam_.up[i] + mu_ * (c[i] - p_.c_upper[i]));
        }
        if (p_.c_lower[i] != -kInf) {
          w[i] -= std::max(0.0, lam_.lo[i] + mu_ * (p_.c_lower[i] - c[i]));
        }
      }
    }
    trips.clear();
    p_.jacobian(x, trips);
    VecX g = p_.gradient(x);
    for (const auto& t : trips) g[t.col()] += t.value() * w[t.row()];
    return g;
  }

 private:
  const NlpProblem& p_;
  const Multipliers& lam_;
  double mu_;
  mutable SparseTriplets jac_buffer_;
};

// Projected L-BFGS with interpolating backtracking on box bounds. The
// curvature history is owned by the caller so it can persist across
// augmented-Lagrangian outer iterations while mu is unchanged.
using LbfgsHistory = std::deque<std::pair<VecX, VecX>>;

struct InnerResult {
  VecX x;
  double proj_grad = 0.0;
  int iterations = 0;
};

InnerResult minimize_al(const NlpProblem& p, const AugmentedLagrangian& al,
                        const VecX& x0, const VecX& scale, double tol,
                        int max_iter, int memory, LbfgsHistory& hist) {
  const int n = p.n;
  auto clamp = [&](VecX& x) {
    for (int i = 0; i < n; ++i) x[i] = std::min(std::max(x[i], p.lower[i]), p.upper[i]);
  };
  auto proj_grad_norm = [&](const VecX& x, const VecX& g) {
    double nrm = 0.0;
    for (int i = 0; i < n; ++i) {
      double step = x[i] - g[i];
      step = std::min(std::max(step, p.lower[i]), p.upper[i]);
      nrm = std::max(nrm, std::abs(step - x[i]));
    }
    return nrm;
  };

  VecX x = x0;
  clamp(x);
  double f = al.value(x);
  VecX g = al.gradient(x);

  InnerResult out;
  const VecX s2 = scale.cwiseProduct(scale);

  for (int it = 0; it < max_iter; ++it) {
    out.iterations = it + 1;
    const double pg = proj_grad_norm(x, g);
    if (pg < tol) break;

    // two-loop recursion, preconditioned by the variable scaling
    VecX d = -g;
    std::vector<double> alpha(hist.size());
    {
      int k = static_cast<int>(hist.size()) - 1;
      for (auto it2 = hist.rbegin(); it2 != hist.rend(); ++it2, --k) {
        const auto& [dy, dg] = *it2;
        const double rho_k = 1.0 / dy.dot(dg);
        alpha[k] = rho_k * dy.dot(d);
        d -= alpha[k] * dg;
      }
      double gamma = 1.0;
      if (!hist.empty()) {
        const auto& [dy, dg] = hist.back();
        gamma = dy.dot(dg) / dg.dot(dg);
        d = gamma * d;
      } else {
        d = s2.cwiseProduct(d);
      }
      k = 0;
      for (auto it2 = hist.begin(); it2 != hist.end(); ++it2, ++k) {
        const auto& [dy, dg] = *it2;
        const double rho_k = 1.0 / dy.dot(dg);
        const double beta = rho_k * dg.dot(d);
        d += (alpha[k] - beta) * dy;
      }
    }
    if (!d.allFinite() || d.dot(g) > -1e-14 * d.norm() * g.norm()) {
      d = -s2.cwiseProduct(g);
      hist.clear();
    }

    // projected backtracking line search with quadratic interpolation
    double step = 1.0;
    bool accepted = false;
    VecX x_new;
    VecX g_new;
    bool have_g_new = false;
    double f_new = f;
    for (int ls = 0; ls < 50; ++ls) {
      x_new = x + step * d;
      clamp(x_new);
      f_new = al.value(x_new);
      const double slope = g.dot(x_new - x);
      if (f_new <= f + 1e-4 * slope || (slope >= 0.0 && f_new < f)) {
        accepted = true;
        break;
      }
      // near the floating-point floor, fall back to gradient descent progress
      if (ls == 0 && std::abs(f_new - f) <= 1e-12 * (1.0 + std::abs(f))) {
        g_new = al.gradient(x_new);
        if (proj_grad_norm(x_new, g_new) < pg) {
          accepted = true;
          have_g_new = true;
          break;
        }
      }
      double next = 0.5 * step;
      const double denom = 2.0 * (f_new - f - slope);
      if (denom > 0.0) {
        next = std::min(0.5 * step, std::max(0.05 * step, -slope * step / denom));
      }
      step = next;
      if (step < 1e-16) break;
    }
    if (!accepted) break;

    if (!have_g_new) g_new = al.gradient(x_new);
    VecX dy = x_new - x;
    VecX dg = g_new - g;
    const double curv = dy.dot(dg);
    if (curv > 1e-12 * dy.norm() * dg.norm()) {
      hist.emplace_back(std::move(dy), std::move(dg));
      if (static_cast<int>(hist.size()) > memory) hist.pop_front();
    }
    x = std::move(x_new);
    f = f_new;
    g = std::move(g_new);
  }
  out.x = x;
  out.proj_grad = proj_grad_norm(x, g);
  return out;
}

// Gauss-Newton feasibility restoration on the violated rows.
void polish_feasibility(const NlpProblem& p, VecX& x, double target) {
  for (int pass = 0; pass < 10; ++pass) {
    VecX c(p.m);
    p.constraints(x, c);
    if (max_violation(p, c) <= target) return;

    SparseTriplets trips;
    p.jacobian(x, trips);

    // residual rows: only violated constraints participate
    VecX r = VecX::Zero(p.m);
    VecX active = VecX::Zero(p.m);
    for (int i = 0; i < p.m; ++i) {
      if (p.c_lower[i] == p.c_upper[i]) {
        r[i] = c[i] - p.c_lower[i];
        active[i] = 1.0;
      } else if (p.c_upper[i] != kInf && c[i] > p.c_upper[i]) {
        r[i] = c[i] - p.c_upper[i];
        active[i] = 1.0;
      } else if (p.c_lower[i] != -kInf && c[i] < p.c_lower[i]) {
        r[i] = c[i] - p.c_lower[i];
        active[i] = 1.0;
      }
    }
    SparseTriplets masked;
    masked.reserve(trips.size());
    for (const auto& t : trips) {
      if (active[t.row()] > 0.0) masked.push_back(t);
    }
    SpMat J(p.m, p.n);
    J.setFromTriplets(masked.begin(), masked.end());
    SpMat JtJ = SpMat(J.transpose()) * J;
    for (int i = 0; i < p.n; ++i) JtJ.coeffRef(i, i) += 1e-9;
    Eigen::SimplicialLDLT<SpMat> chol(JtJ);
    if (chol.info() != Eigen::Success) return;
    VecX dx = chol.solve(-(J.transpose() * r).eval());
    if (!dx.allFinite()) return;
    VecX x_new = x + dx;
    for (int i = 0; i < p.n; ++i) {
      x_new[i] = std::min(std::max(x_new[i], p.lower[i]), p.upper[i]);
    }
    VecX c_new(p.m);
    p.constraints(x_new, c_new);
    if (max_violation(p, c_new) < max_violation(p, c)) {
      x = x_new;
    } else {
      return;
    }
  }
}

// Conjugate-gradient refinement of stationarity inside the null space of the
// active constraints, with finite-difference Lagrangian-Hessian products.
// Exact for quadratic objectives with linear constraints; a bounded number of
// steps elsewhere. Multiplier weights are frozen at their AL estimates.
void refine_stationarity(const NlpProblem& p, VecX& x, const VecX& weights,
                         int max_cg) {
  VecX c(p.m);
  p.constraints(x, c);
  SparseTriplets trips;
  p.jacobian(x, trips);

  // active rows: equalities, and inequalities touching a bound or carrying a
  // multiplier; active/frozen variable bounds enter as unit rows
  std::vector<char> row_active(p.m, 0);
  for (int i = 0; i < p.m; ++i) {
    if (p.c_lower[i] == p.c_upper[i]) {
      row_active[i] = 1;
    } else if (std::abs(weights[i]) > 1e-12) {
      row_active[i] = 1;
    } else if (p.c_upper[i] != kInf && c[i] > p.c_upper[i] - 1e-9) {
      row_active[i] = 1;
    } else if (p.c_lower[i] != -kInf && c[i] < p.c_lower[i] + 1e-9) {
      row_active[i] = 1;
    }
  }
  std::vector<int> bound_vars;
  for (int i = 0; i < p.n; ++i) {
    if (p.lower[i] == p.upper[i] ||
        (p.upper[i] != kInf && x[i] > p.upper[i] - 1e-10) ||
        (p.lower[i] != -kInf && x[i] < p.lower[i] + 1e-10)) {
      bound_vars.push_back(i);
    }
  }
  std::vector<int> row_map(p.m, -1);
  int m_act = 0;
  for (int i = 0; i < p.m; ++i) {
    if (row_active[i]) row_map[i] = m_act++;
  }
  const int m_total = m_act + static_cast<int>(bound_vars.size());
  if (m_total >= p.n) return;

  SparseTriplets act_trips;
  for (const auto& t : trips) {
    if (row_map[t.row()] >= 0) {
      act_trips.emplace_back(row_map[t.row()], t.col(), t.value());
    }
  }
  for (size_t k = 0; k < bound_vars.size(); ++k) {
    act_trips.emplace_back(m_act + static_cast<int>(k), bound_vars[k], 1.0);
  }
  SpMat A(m_total, p.n);
  A.setFromTriplets(act_trips.begin(), act_trips.end());
  SpMat AAt = SpMat(A * SpMat(A.transpose()));
  for (int i = 0; i < m_total; ++i) AAt.coeffRef(i, i) += 1e-12;
  Eigen::SimplicialLDLT<SpMat> chol(AAt);
  if (chol.info() != Eigen::Success) return;
  auto project = [&](const VecX& v) -> VecX {
    if (m_total == 0) return v;
    return v - A.transpose() * chol.solve((A * v).eval());
  };
  auto lagrangian_gradient = [&](const VecX& xx) -> VecX {
    VecX g = p.gradient(xx);
    SparseTriplets tt;
    p.jacobian(xx, tt);
    for (const auto& t : tt) g[t.col()] += t.value() * weights[t.row()];
    return g;
  };

  const VecX x_start = x;
  VecX r = project(lagrangian_gradient(x));
  const double r0_norm = r.norm();
  if (r0_norm < 1e-14) return;
  VecX d = -r;
  double rr = r.squaredNorm();
  for (int it = 0; it < max_cg; ++it) {
    if (std::sqrt(rr) < 1e-12 * std::max(1.0, r0_norm)) break;
    const double dn = d.norm();
    if (dn < 1e-16) break;
    const double h = 1e-6 * std::max(1.0, x.norm()) / dn;
    const VecX hd =
        project((lagrangian_gradient(x + h * d) - lagrangian_gradient(x - h * d)) /
                (2.0 * h));
    const double dhd = d.dot(hd);
    if (dhd <= 1e-14 * dn * dn) break;
    const double alpha = rr / dhd;
    x += alpha * d;
    r += alpha * hd;
    const double rr_new = r.squaredNorm();
    d = -r + (rr_new / rr) * d;
    rr = rr_new;
  }
  // keep the refinement only if stationarity improved
  if (project(lagrangian_gradient(x)).norm() > r0_norm) x = x_start;
  for (int i = 0; i < p.n; ++i) {
    x[i] = std::min(std::max(x[i], p.lower[i]), p.upper[i]);
  }
}

}  // namespace

NlpResult solve_nlp(const NlpProblem& problem, const VecX& x0_in,
                    const NlpSettings& s, const NlpWarmStart* warm) {
  // work in scaled variables x = S y so the quasi-Newton model starts
  // well conditioned; callbacks are wrapped accordingly
  const bool scaled = problem.x_scale.size() == problem.n &&
                      (problem.x_scale.array() != 1.0).any();
  NlpProblem p = problem;
  VecX x0 = x0_in;
  VecX S;
  if (scaled) {
    S = problem.x_scale;
    p.lower = problem.lower.cwiseQuotient(S);
    p.upper = problem.upper.cwiseQuotient(S);
    p.x_scale = VecX::Ones(problem.n);
    x0 = x0_in.cwiseQuotient(S);
    p.objective = [&problem, S](const VecX& y) {
      return problem.objective(S.cwiseProduct(y));
    };
    p.gradient = [&problem, S](const VecX& y) {
      return S.cwiseProduct(problem.gradient(S.cwiseProduct(y))).eval();
    };
    p.constraints = [&problem, S](const VecX& y, VecX& c) {
      problem.constraints(S.cwiseProduct(y), c);
    };
    p.jacobian = [&problem, S](const VecX& y, SparseTriplets& t) {
      problem.jacobian(S.cwiseProduct(y), t);
      for (auto& trip : t) {
        trip = Eigen::Triplet<double>(trip.row(), trip.col(),
                                      trip.value() * S[trip.col()]);
      }
    };
  }

  NlpResult res;
  VecX x = x0;
  for (int i = 0; i < p.n; ++i) x[i] = std::min(std::max(x[i], p.lower[i]), p.upper[i]);

  Multipliers lam{VecX::Zero(p.m), VecX::Zero(p.m), VecX::Zero(p.m)};
  double mu = s.mu0;
  if (warm) {
    if (warm->lambda_eq.size() == p.m) lam.eq = warm->lambda_eq;
    if (warm->lambda_up.size() == p.m) lam.up = warm->lambda_up;
    if (warm->lambda_lo.size() == p.m) lam.lo = warm->lambda_lo;
    if (warm->mu > 0.0) mu = warm->mu;
  }
  VecX scale = p.x_scale.size() == p.n ? p.x_scale : VecX::Ones(p.n);

  double omega = 1e-2;  // inner tolerance schedule
  VecX c(p.m);
  LbfgsHistory hist;
  int stall_count = 0;
  double prev_cost = kInf;
  int plateau_count = 0;
  // safeguarded outer loop: an iterate that worsens feasibility is rolled
  // back to the incumbent and the penalty is raised instead
  double best_viol = kInf;
  VecX best_x = x;

  for (int outer = 0; outer < s.max_outer; ++outer) {
    res.outer_iterations = outer + 1;
    AugmentedLagrangian al(p, lam, mu);
    InnerResult inner = minimize_al(p, al, x, scale, std::max(omega, s.tol_opt),
                                    s.max_inner, s.lbfgs_memory, hist);
    x = inner.x;
    res.inner_iterations += inner.iterations;
    res.projected_gradient = inner.proj_grad;

    p.constraints(x, c);
    double viol = max_violation(p, c);
    if (s.verbose) {
      std::printf("al outer %2d  mu %.1e  viol %.3e  pg %.3e  f %.6e\n", outer,
                  mu, viol, inner.proj_grad, p.objective(x));
    }

    const bool improved = viol <= best_viol;
    if (viol <= std::max(s.tol_feas, s.viol_decrease * best_viol)) {
      // multiplier update
      for (int i = 0; i < p.m; ++i) {
        if (p.c_lower[i] == p.c_upper[i]) {
          lam.eq[i] += mu * (c[i] - p.c_lower[i]);
        } else {
          if (p.c_upper[i] != kInf) {
            lam.up[i] = std::max(0.0, lam.up[i] + mu * (c[i] - p.c_upper[i]));
          }
          if (p.c_lower[i] != -kInf) {
            lam.lo[i] = std::max(0.0, lam.lo[i] + mu * (p.c_lower[i] - c[i]));
          }
        }
      }
      omega = std::max(0.3 * omega, 0.5 * s.tol_opt);
    } else {
      mu = std::min(s.mu_max, s.mu_growth * mu);
      omega = 1e-2;
      hist.clear();  // penalty Hessian changed
    }
    if (improved) {
      best_viol = viol;
      best_x = x;
      stall_count = 0;
    } else {
      x = best_x;
      viol = best_viol;
      hist.clear();
      if (mu >= s.mu_max && ++stall_count >= 3) {
        res.violation_trace.push_back(viol);
        res.status = NlpStatus::kStalled;
        break;
      }
    }
    res.violation_trace.push_back(viol);
    if (viol <= s.tol_feas && inner.proj_grad <= s.tol_opt) {
      res.status = NlpStatus::kOptimal;
      break;
    }
    if (s.tol_cost_rel > 0.0 && viol <= s.tol_feas) {
      const double f_now = p.objective(x);
      if (std::abs(f_now - prev_cost) <= s.tol_cost_rel * (1.0 + std::abs(f_now))) {
        if (++plateau_count >= 2) {
          res.status = NlpStatus::kOptimal;
          break;
        }
      } else {
        plateau_count = 0;
      }
      prev_cost = f_now;
    }
  }

  if (s.refine_stationarity && p.n > 0) {
    VecX w = VecX::Zero(p.m);
    p.constraints(x, c);
    for (int i = 0; i < p.m; ++i) {
      if (p.c_lower[i] == p.c_upper[i]) {
        w[i] = lam.eq[i] + mu * (c[i] - p.c_lower[i]);
      } else {
        if (p.c_upper[i] != kInf) {
          w[i] += std::max(0.0, lam.up[i] + mu * (c[i] - p.c_upper[i]));
        }
        if (p.c_lower[i] != -kInf) {
          w[i] -= std::max(0.0, lam.lo[i] + mu * (p.c_lower[i] - c[i]));
        }
      }
    }
    refine_stationarity(p, x, w, s.max_refine_cg);
  }
  if (s.polish_feasibility) {
    polish_feasibility(p, x, 0.1 * s.tol_feas);
  }
  p.constraints(x, c);
  res.x = scaled ? VecX(S.cwiseProduct(x)) : x;
  res.objective = p.objective(x);
  res.max_violation = max_violation(p, c);
  res.multipliers = {lam.eq, lam.up, lam.lo, mu};
  if (res.status != NlpStatus::kOptimal &&
      res.max_violation <= s.tol_feas &&
      res.projected_gradient <= 10 * s.tol_opt) {
    res.status = NlpStatus::kOptimal;
  }
  return res;
}

DerivativeReport check_derivatives(const NlpProblem& p, const VecX& x,
                                   double step, double tol) {
  DerivativeReport rep;
  VecX g = p.gradient(x);
  MatX J = MatX::Zero(p.m, p.n);
  {
    SparseTriplets trips;
    p.jacobian(x, trips);
    for (const auto& t : trips) J(t.row(), t.col()) += t.value();
  }
  std::vector<bool> row_bad(p.m, false);
  for (int k = 0; k < p.n; ++k) {
    VecX xp = x, xm = x;
    xp[k] += step;
    xm[k] -= step;
    const double df = (p.objective(xp) - p.objective(xm)) / (2 * step);
    rep.max_gradient_error =
        std::max(rep.max_gradient_error,
                 std::abs(df - g[k]) / std::max(1.0, std::abs(df)));
    VecX cp(p.m), cm(p.m);
    p.constraints(xp, cp);
    p.constraints(xm, cm);
    for (int i = 0; i < p.m; ++i) {
      const double fd = (cp[i] - cm[i]) / (2 * step);
      const double err = std::abs(fd - J(i, k)) / std::max(1.0, std::abs(fd));
      rep.max_jacobian_error = std::max(rep.max_jacobian_error, err);
      if (err > tol) row_bad[i] = true;
    }
  }
  for (int i = 0; i < p.m; ++i) {
    if (row_bad[i]) rep.bad_rows.push_back(i);
  }
  return rep;
}

}  // namespace quad
