#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "quad/types.hpp"

namespace quad {

// One shooting node of a discrete optimal-control problem. States live in
// ambient coordinates; derivatives are taken in the tangent space provided
// by retract/difference. Nodes with nu() == 0 are pure resets (impulses).
class IlqrNode {
 public:
  virtual ~IlqrNode() = default;
  virtual int nx() const = 0;
  virtual int nu() const = 0;
  virtual VecX dynamics(const VecX& x, const VecX& u) const = 0;
  virtual void dynamics_derivs(const VecX& x, const VecX& u, MatX& fx,
                               MatX& fu) const = 0;
  virtual double cost(const VecX& x, const VecX& u) const = 0;
  virtual void cost_derivs(const VecX& x, const VecX& u, VecX& lx, VecX& lu,
                           MatX& lxx, MatX& lux, MatX& luu) const = 0;
  virtual VecX retract(const VecX& x, const VecX& dx) const = 0;
  virtual VecX difference(const VecX& a, const VecX& b) const = 0;  // a (-) b
};

struct IlqrTerminal {
  std::function<double(const VecX&)> cost;
  std::function<void(const VecX&, VecX&, MatX&)> derivs;  // lx, lxx
};

struct IlqrOptions {
  int max_iterations = 150;
  double tol_grad = 1e-6;
  double tol_cost = 1e-9;
  double reg_init = 1e-6;
  double reg_min = 1e-9;
  double reg_max = 1e9;
  int n_threads = 1;
  bool verbose = false;
};

struct IlqrResult {
  std::vector<VecX> x;  // n_nodes + 1
  std::vector<VecX> u;  // n_nodes (empty entries at reset nodes)
  double cost = 0.0;
  int iterations = 0;
  bool converged = false;
  double grad_norm = 0.0;
  std::vector<double> cost_trace;
  std::vector<double> reg_trace;
  bool hessians_spd = false;  // final backward pass kept all Quu/Vxx SPD
  std::vector<MatX> gains_K;
  std::vector<VecX> gains_k;
};

struct IlqrError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

IlqrResult ilqr_solve(const std::vector<IlqrNode*>& nodes,
                      const IlqrTerminal& terminal, const VecX& x0,
                      const std::vector<VecX>& u_init,
                      const IlqrOptions& options = {});

}  // namespace quad
