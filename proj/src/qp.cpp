#include "quad/solvers/qp.hpp"

#include <Eigen/Cholesky>
#include <cmath>
#include <limits>

namespace quad {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kEqRhoScale = 1e3;

struct Kkt {
  Eigen::LLT<MatX> llt;
  void factor(const QpProblem& p, double sigma, const VecX& rho) {
    MatX K = p.P;
    K.diagonal().array() += sigma;
    K.noalias() += p.A.transpose() * rho.asDiagonal() * p.A;
    llt.compute(K);
  }
};

double inf_norm(const VecX& v) { return v.size() ? v.cwiseAbs().maxCoeff() : 0.0; }

}  // namespace

QpResult solve_qp(const QpProblem& p, const QpSettings& s, const QpWarmStart* warm) {
  const int n = p.n();
  const int m = p.m();
  QpResult res;
  res.x = (warm && warm->x.size() == n) ? warm->x : VecX::Zero(n);
  res.y = (warm && warm->y.size() == m) ? warm->y : VecX::Zero(m);
  res.z = m ? (p.A * res.x).eval() : VecX::Zero(0);

  VecX rho(m);
  for (int i = 0; i < m; ++i) {
    rho[i] = (p.lower[i] == p.upper[i]) ? kEqRhoScale * s.rho : s.rho;
  }
  Kkt kkt;
  kkt.factor(p, s.sigma, rho);

  VecX y_prev = res.y;
  double rho_scale = 1.0;
  const double tol_certificate = 1e-10;

  for (int iter = 1; iter <= s.max_iter; ++iter) {
    // x update
    VecX rhs = s.sigma * res.x - p.q;
    if (m) rhs.noalias() += p.A.transpose() * (rho.cwiseProduct(res.z) - res.y);
    const VecX x_tilde = kkt.llt.solve(rhs);
    const VecX z_tilde = m ? (p.A * x_tilde).eval() : VecX::Zero(0);
    res.x = s.relaxation * x_tilde + (1.0 - s.relaxation) * res.x;
    // z and y updates with projection onto [lower, upper]
    y_prev = res.y;
    for (int i = 0; i < m; ++i) {
      const double z_hat =
          s.relaxation * z_tilde[i] + (1.0 - s.relaxation) * res.z[i];
      const double cand = z_hat + res.y[i] / rho[i];
      const double z_new = std::min(std::max(cand, p.lower[i]), p.upper[i]);
      res.y[i] += rho[i] * (z_hat - z_new);
      res.z[i] = z_new;
    }

    if (iter % 25 == 0 || iter == s.max_iter) {
      const VecX Ax = m ? (p.A * res.x).eval() : VecX::Zero(0);
      const VecX r_prim = Ax - res.z;
      VecX r_dual = p.P * res.x + p.q;
      if (m) r_dual.noalias() += p.A.transpose() * res.y;
      const double eps_prim = inf_norm(r_prim);
      const double eps_dual = inf_norm(r_dual);
      res.iterations = iter;
      if (eps_prim < s.tol && eps_dual < s.tol) {
        res.status = QpStatus::kOptimal;
        break;
      }
      // primal infeasibility certificate from the dual direction
      if (m) {
        const VecX dy = res.y - y_prev;
        const double dy_norm = inf_norm(dy);
        if (dy_norm > tol_certificate) {
          double support = 0.0;
          bool bounded = true;
          for (int i = 0; i < m; ++i) {
            if (dy[i] > 0) {
              if (p.upper[i] == kInf) bounded = false;
              else support += p.upper[i] * dy[i];
            } else if (dy[i] < 0) {
              if (p.lower[i] == -kInf) bounded = false;
              else support += p.lower[i] * dy[i];
            }
          }
          if (bounded && inf_norm(p.A.transpose() * dy) < 1e-8 * dy_norm &&
              support < -1e-8 * dy_norm) {
            res.status = QpStatus::kInfeasible;
            break;
          }
        }
      }
      // rho adaptation
      const double ratio = (eps_prim + 1e-16) / (eps_dual + 1e-16);
      if (ratio > 25.0 || ratio < 0.04) {
        const double factor = std::sqrt(std::min(std::max(ratio, 1e-3), 1e3));
        rho_scale *= factor;
        rho *= factor;
        kkt.factor(p, s.sigma, rho);
      }
    }
  }

  if (res.status == QpStatus::kInfeasible) return res;

  if (s.polish && m) {
    // equality-KKT solve on the active set guessed from the duals
    std::vector<std::pair<int, double>> active;  // row, pinned bound value
    for (int i = 0; i < m; ++i) {
      if (p.lower[i] == p.upper[i]) {
        active.emplace_back(i, p.lower[i]);
      } else if (p.upper[i] - res.z[i] < 1e-7 && res.y[i] > -1e-9) {
        active.emplace_back(i, p.upper[i]);
      } else if (res.z[i] - p.lower[i] < 1e-7 && res.y[i] < 1e-9) {
        active.emplace_back(i, p.lower[i]);
      }
    }
    const int ma = static_cast<int>(active.size());
    MatX K = MatX::Zero(n + ma, n + ma);
    K.topLeftCorner(n, n) = p.P;
    VecX rhs(n + ma);
    rhs.head(n) = -p.q;
    for (int k = 0; k < ma; ++k) {
      const int i = active[k].first;
      K.block(n + k, 0, 1, n) = p.A.row(i);
      K.block(0, n + k, n, 1) = p.A.row(i).transpose();
      rhs[n + k] = active[k].second;
    }
    MatX K_reg = K;
    K_reg.diagonal().head(n).array() += 1e-11;
    K_reg.diagonal().tail(ma).array() -= 1e-11;
    Eigen::PartialPivLU<MatX> lu(K_reg);
    VecX sol = lu.solve(rhs);
    sol += lu.solve(rhs - K * sol);
    const VecX x_pol = sol.head(n);
    VecX y_pol = VecX::Zero(m);
    for (int k = 0; k < ma; ++k) y_pol[active[k].first] = sol[n + k];
    const VecX z_pol = p.A * x_pol;
    // keep the polished iterate only if it improves the KKT error
    auto kkt_error = [&](const VecX& x, const VecX& y, const VecX& z) {
      double prim = 0.0, comp = 0.0;
      for (int i = 0; i < m; ++i) {
        prim = std::max(prim, std::max(p.lower[i] - z[i], z[i] - p.upper[i]));
        if (p.lower[i] == p.upper[i]) continue;
        if (y[i] > 0 && p.upper[i] != kInf) comp = std::max(comp, y[i] * (p.upper[i] - z[i]));
        if (y[i] < 0 && p.lower[i] != -kInf) comp = std::max(comp, -y[i] * (z[i] - p.lower[i]));
      }
      const double stat = inf_norm(p.P * x + p.q + p.A.transpose() * y);
      return std::max({prim, stat, comp});
    };
    if (kkt_error(x_pol, y_pol, z_pol) <= kkt_error(res.x, res.y, res.z)) {
      res.x = x_pol;
      res.y = y_pol;
      res.z = z_pol;
    }
  }

  res.objective = 0.5 * res.x.dot(p.P * res.x) + p.q.dot(res.x);
  VecX stat = p.P * res.x + p.q;
  if (m) stat.noalias() += p.A.transpose() * res.y;
  res.kkt_stationarity = inf_norm(stat);
  double prim = 0.0, comp = 0.0;
  const VecX Ax = m ? (p.A * res.x).eval() : VecX::Zero(0);
  for (int i = 0; i < m; ++i) {
    prim = std::max(prim, std::max(p.lower[i] - Ax[i], Ax[i] - p.upper[i]));
    const double slack_u = p.upper[i] == kInf ? kInf : p.upper[i] - Ax[i];
    const double slack_l = p.lower[i] == -kInf ? kInf : Ax[i] - p.lower[i];
    if (res.y[i] > 0 && slack_u != kInf) comp = std::max(comp, res.y[i] * std::abs(slack_u));
    if (res.y[i] < 0 && slack_l != kInf) comp = std::max(comp, -res.y[i] * std::abs(slack_l));
  }
  res.kkt_primal = std::max(prim, 0.0);
  res.kkt_complementarity = comp;
  if (res.status == QpStatus::kMaxIter &&
      res.kkt_primal < 10 * s.tol && res.kkt_stationarity < 10 * s.tol) {
    res.status = QpStatus::kOptimal;
  }
  return res;
}

}  // namespace quad
