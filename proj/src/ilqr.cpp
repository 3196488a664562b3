#include "quad/ilqr.hpp"

#include <Eigen/Cholesky>
#include <cmath>
#include <cstdio>
#include <thread>

namespace quad {
namespace {

struct NodeDerivs {
  MatX fx, fu;
  VecX lx, lu;
  MatX lxx, lux, luu;
};

double rollout(const std::vector<IlqrNode*>& nodes, const IlqrTerminal& terminal,
               const VecX& x0, const std::vector<VecX>& u, std::vector<VecX>& x) {
  const int T = static_cast<int>(nodes.size());
  x.assign(T + 1, VecX());
  x[0] = x0;
  double cost = 0.0;
  for (int t = 0; t < T; ++t) {
    cost += nodes[t]->cost(x[t], u[t]);
    x[t + 1] = nodes[t]->dynamics(x[t], u[t]);
    if (!x[t + 1].allFinite()) return std::numeric_limits<double>::quiet_NaN();
  }
  cost += terminal.cost(x[T]);
  return cost;
}

void compute_derivatives(const std::vector<IlqrNode*>& nodes,
                         const std::vector<VecX>& x, const std::vector<VecX>& u,
                         std::vector<NodeDerivs>& d, int n_threads) {
  const int T = static_cast<int>(nodes.size());
  d.resize(T);
  auto work = [&](int begin, int end) {
    for (int t = begin; t < end; ++t) {
      nodes[t]->dynamics_derivs(x[t], u[t], d[t].fx, d[t].fu);
      nodes[t]->cost_derivs(x[t], u[t], d[t].lx, d[t].lu, d[t].lxx, d[t].lux,
                            d[t].luu);
    }
  };
  if (n_threads <= 1 || T < 2 * n_threads) {
    work(0, T);
    return;
  }
  std::vector<std::thread> pool;
  const int chunk = (T + n_threads - 1) / n_threads;
  for (int k = 0; k < n_threads; ++k) {
    const int begin = k * chunk;
    const int end = std::min(T, begin + chunk);
    if (begin < end) pool.emplace_back(work, begin, end);
  }
  for (auto& th : pool) th.join();
}

}  // namespace

IlqrResult ilqr_solve(const std::vector<IlqrNode*>& nodes,
                      const IlqrTerminal& terminal, const VecX& x0,
                      const std::vector<VecX>& u_init, const IlqrOptions& opt) {
  const int T = static_cast<int>(nodes.size());
  if (T == 0) throw IlqrError("empty node list");
  const int nx = nodes[0]->nx();

  IlqrResult res;
  res.u = u_init;
  double cost = rollout(nodes, terminal, x0, res.u, res.x);
  if (!std::isfinite(cost)) throw IlqrError("initial rollout diverged (NaN)");
  res.cost = cost;
  res.cost_trace.push_back(cost);

  double reg = opt.reg_init;
  std::vector<NodeDerivs> d;
  res.gains_K.assign(T, MatX());
  res.gains_k.assign(T, VecX());

  for (int iter = 0; iter < opt.max_iterations; ++iter) {
    res.iterations = iter + 1;
    compute_derivatives(nodes, res.x, res.u, d, opt.n_threads);

    // backward pass, restarted with a larger regularizer on failure
    double dv1 = 0.0, dv2 = 0.0, grad_inf = 0.0;
    bool backward_ok = false;
    while (!backward_ok) {
      backward_ok = true;
      dv1 = dv2 = grad_inf = 0.0;
      VecX vx;
      MatX vxx;
      terminal.derivs(res.x[T], vx, vxx);
      for (int t = T - 1; t >= 0; --t) {
        const NodeDerivs& dt = d[t];
        const VecX qx = dt.lx + dt.fx.transpose() * vx;
        const MatX qxx_raw = dt.lxx + dt.fx.transpose() * vxx * dt.fx;
        if (nodes[t]->nu() == 0) {
          vx = qx;
          vxx = 0.5 * (qxx_raw + qxx_raw.transpose());
          res.gains_K[t] = MatX::Zero(0, nx);
          res.gains_k[t] = VecX::Zero(0);
          continue;
        }
        const VecX qu = dt.lu + dt.fu.transpose() * vx;
        MatX quu = dt.luu + dt.fu.transpose() * vxx * dt.fu;
        quu = 0.5 * (quu + quu.transpose());
        quu.diagonal().array() += reg;
        const MatX qux = dt.lux + dt.fu.transpose() * vxx * dt.fx;
        Eigen::LLT<MatX> llt(quu);
        if (llt.info() != Eigen::Success) {
          reg = std::max(10.0 * reg, 1e-6);
          if (reg > opt.reg_max) {
            res.grad_norm = grad_inf;
            return res;  // best effort, not converged
          }
          backward_ok = false;
          break;
        }
        const VecX k = -llt.solve(qu);
        const MatX K = -llt.solve(qux);
        res.gains_k[t] = k;
        res.gains_K[t] = K;
        dv1 += k.dot(qu);
        dv2 += 0.5 * k.dot(quu * k);
        grad_inf = std::max(grad_inf, qu.cwiseAbs().maxCoeff());
        vx = qx + K.transpose() * quu * k + K.transpose() * qu + qux.transpose() * k;
        MatX vxx_new = qxx_raw + K.transpose() * quu * K + K.transpose() * qux +
                       qux.transpose() * K;
        vxx = 0.5 * (vxx_new + vxx_new.transpose());
      }
    }
    res.grad_norm = grad_inf;
    res.reg_trace.push_back(reg);
    res.hessians_spd = true;

    if (grad_inf < opt.tol_grad) {
      res.converged = true;
      break;
    }

    // forward pass with backtracking on the expected reduction
    bool accepted = false;
    for (double alpha = 1.0; alpha > 1e-4; alpha *= 0.5) {
      std::vector<VecX> x_new(T + 1);
      std::vector<VecX> u_new(T);
      x_new[0] = x0;
      double cost_new = 0.0;
      bool finite = true;
      for (int t = 0; t < T; ++t) {
        if (nodes[t]->nu() > 0) {
          const VecX dx = nodes[t]->difference(x_new[t], res.x[t]);
          u_new[t] = res.u[t] + alpha * res.gains_k[t] + res.gains_K[t] * dx;
        } else {
          u_new[t] = VecX::Zero(0);
        }
        cost_new += nodes[t]->cost(x_new[t], u_new[t]);
        x_new[t + 1] = nodes[t]->dynamics(x_new[t], u_new[t]);
        if (!x_new[t + 1].allFinite() || !std::isfinite(cost_new)) {
          finite = false;
          break;
        }
      }
      if (!finite) continue;
      cost_new += terminal.cost(x_new[T]);
      if (!std::isfinite(cost_new)) continue;
      const double expected = -(alpha * dv1 + alpha * alpha * dv2);
      const double actual = cost - cost_new;
      if ((expected > 0.0 && actual > 1e-4 * expected) ||
          (expected <= 0.0 && actual > 0.0)) {
        res.x = std::move(x_new);
        res.u = std::move(u_new);
        const double decrease = actual;
        cost = cost_new;
        res.cost = cost;
        res.cost_trace.push_back(cost);
        accepted = true;
        reg = std::max(opt.reg_min, 0.5 * reg);
        if (decrease < opt.tol_cost) {
          res.converged = true;
        }
        break;
      }
    }
    if (res.converged) break;
    if (!accepted) {
      reg = std::max(10.0 * reg, 1e-6);
      if (reg > opt.reg_max) break;
    }
    if (opt.verbose) {
      std::printf("ilqr iter %3d  cost %.8e  grad %.3e  reg %.1e\n", iter, cost,
                  grad_inf, reg);
    }
  }
  return res;
}

}  // namespace quad
