#include "quad/whole_body.hpp"

#include <chrono>
#include <cstdlib>
#include <thread>

#include "quad/euler.hpp"

namespace quad {

BarrierEval quadratic_barrier(double value, double lower, double upper,
                              double stiffness) {
  BarrierEval out;
  if (value > upper) {
    const double d = value - upper;
    out.value = 0.5 * stiffness * d * d;
    out.derivative = stiffness * d;
    out.second_derivative = stiffness;
  } else if (value < lower) {
    const double d = value - lower;
    out.value = 0.5 * stiffness * d * d;
    out.derivative = stiffness * d;
    out.second_derivative = stiffness;
  }
  return out;
}

double eval_tracking_cost(const RobotModel& model, const VecX& q, const VecX& v,
                          const TrackingRef& ref, const WbdWeights& w,
                          VecX* grad_q, VecX* grad_v) {
  const Kinematics kin = forward_kinematics(model, q);
  const MatX A = centroidal_momentum_matrix(model, q);
  const Vec6 h = A * v;

  Vec6 wh;
  wh << Vec3::Constant(w.track_lin_momentum), Vec3::Constant(w.track_ang_momentum);

  double cost = w.track_com * (kin.com - ref.r).squaredNorm();
  cost += (h - ref.h).cwiseProduct(wh.cwiseSqrt()).squaredNorm();
  for (int j = 0; j < model.n_f(); ++j) {
    cost += w.track_foot * (kin.foot[j] - ref.p[j]).squaredNorm();
  }
  if (grad_q != nullptr || grad_v != nullptr) {
    const MatX J_com = A.topRows(3) / model.total_mass;
    if (grad_v) {
      *grad_v = 2.0 * A.transpose() * wh.cwiseProduct(h - ref.h);
    }
    if (grad_q) {
      VecX g = 2.0 * w.track_com * J_com.transpose() * (kin.com - ref.r);
      const MatX dh_dq = cmm_configuration_derivative(model, q, v);
      g += 2.0 * dh_dq.transpose() * wh.cwiseProduct(h - ref.h);
      std::vector<int> all_feet(model.n_f());
      for (int j = 0; j < model.n_f(); ++j) all_feet[j] = j;
      const MatX Jc = contact_jacobian(model, q, all_feet);
      for (int j = 0; j < model.n_f(); ++j) {
        g += 2.0 * w.track_foot * Jc.middleRows(3 * j, 3).transpose() *
             (kin.foot[j] - ref.p[j]);
      }
      *grad_q = g;
    }
  }
  return cost;
}

namespace {

struct NodeEval {
  VecX x_next;
  VecX residual;
  VecX forces;  // stacked for the active set
};

// Shooting node over one timestep with rigid contacts. Dynamics and cost
// residuals come from a single evaluation; derivatives by central FD in the
// state tangent. The last evaluation sweep is cached so cost_derivs can
// reuse the Jacobians assembled in dynamics_derivs.
class WbdNode final : public IlqrNode {
 public:
  WbdNode(const WbdProblem& prob, int knot, bool impulse)
      : model_(*prob.model),
        weights_(prob.weights),
        gravity_(prob.gravity),
        friction_(prob.friction),
        dt_(prob.schedule.dt),
        knot_(knot),
        impulse_(impulse),
        ref_(prob.refs.at(knot)) {
    feet_ = prob.schedule.stance_feet(knot);
    nq_ = model_.n_q();
    nv_ = model_.n_v();
    nj_ = model_.n_j();
  }

  int nx() const override { return 2 * nv_; }
  int nu() const override { return impulse_ ? 0 : nj_; }

  NodeEval evaluate(const VecX& x, const VecX& u) const {
    NodeEval out;
    const VecX q = x.head(nq_);
    const VecX v = x.tail(nv_);
    ContactSet contacts;
    contacts.feet = feet_;
    VecX q_next, v_next;
    try {
      if (impulse_) {
        auto imp = impact_dynamics(model_, q, v, contacts);
        q_next = q;
        v_next = imp.v_plus;
        out.forces = imp.impulses;
      } else {
        // a few semi-implicit substeps keep the fast leg dynamics accurate
        constexpr int kSubsteps = 4;
        const double h = dt_ / kSubsteps;
        q_next = q;
        v_next = v;
        VecX force_avg = VecX::Zero(3 * static_cast<int>(feet_.size()));
        for (int s = 0; s < kSubsteps; ++s) {
          auto fwd =
              contact_forward_dynamics(model_, q_next, v_next, u, contacts, gravity_);
          v_next += h * fwd.vdot;
          q_next = integrate_q(model_, q_next, h * v_next);
          force_avg += fwd.forces / kSubsteps;
        }
        out.forces = force_avg;
      }
    } catch (const std::exception&) {
      // degenerate contact or numeric overflow: poison the candidate so the
      // line search backs away from it
      out.x_next = VecX::Constant(
          nq_ + nv_, std::numeric_limits<double>::quiet_NaN());
      out.forces = VecX::Zero(3 * static_cast<int>(feet_.size()));
      out.residual = residual(q, v, u, out.forces);
      return out;
    }
    out.x_next.resize(nq_ + nv_);
    out.x_next << q_next, v_next;
    out.residual = residual(q, v, u, out.forces);
    return out;
  }

  VecX residual(const VecX& q, const VecX& v, const VecX& u,
                const VecX& forces) const {
    const int n_stance = static_cast<int>(feet_.size());
    const int nr = 3 + 6 + 12 + (impulse_ ? 0 : 2 * nj_) + nj_ + nj_ +
                   (impulse_ ? 0 : 5 * n_stance);
    VecX r(nr);
    int at = 0;
    const Kinematics kin = forward_kinematics(model_, q);
    const MatX A = centroidal_momentum_matrix(model_, q);
    const Vec6 h = A * v;
    r.segment<3>(at) = std::sqrt(weights_.track_com) * (kin.com - ref_.r);
    at += 3;
    r.segment<3>(at) = std::sqrt(weights_.track_lin_momentum) *
                       (h.head<3>() - ref_.h.head<3>());
    at += 3;
    r.segment<3>(at) = std::sqrt(weights_.track_ang_momentum) *
                       (h.tail<3>() - ref_.h.tail<3>());
    at += 3;
    for (int j = 0; j < 4; ++j) {
      r.segment<3>(at) = std::sqrt(weights_.track_foot) * (kin.foot[j] - ref_.p[j]);
      at += 3;
    }
    if (!impulse_) {
      r.segment(at, nj_) = std::sqrt(weights_.torque_reg) * u;
      at += nj_;
      for (int j = 0; j < nj_; ++j) {
        const double viol =
            std::max(0.0, std::abs(u[j]) - model_.torque_limit[j]);
        r[at + j] = std::sqrt(weights_.barrier_limits) * viol;
      }
      at += nj_;
    }
    r.segment(at, nj_) = std::sqrt(weights_.joint_vel_reg) * v.tail(nj_);
    at += nj_;
    for (int j = 0; j < nj_; ++j) {
      const double qj = q[7 + j];
      const double viol = std::max(0.0, qj - model_.joint_upper[j]) +
                          std::min(0.0, qj - model_.joint_lower[j]);
      r[at + j] = std::sqrt(weights_.barrier_limits) * viol;
    }
    at += nj_;
    if (!impulse_) {
      const double c_mu = friction_ * 0.70710678118654752;
      for (int k = 0; k < n_stance; ++k) {
        const Vec3 f = forces.segment<3>(3 * k);
        const double s = std::sqrt(weights_.barrier_friction);
        r[at++] = s * std::max(0.0, -f.z());
        r[at++] = s * std::max(0.0, f.x() - c_mu * f.z());
        r[at++] = s * std::max(0.0, -f.x() - c_mu * f.z());
        r[at++] = s * std::max(0.0, f.y() - c_mu * f.z());
        r[at++] = s * std::max(0.0, -f.y() - c_mu * f.z());
      }
    }
    return r;
  }

  VecX dynamics(const VecX& x, const VecX& u) const override {
    return cached(x, u).x_next;
  }

  double cost(const VecX& x, const VecX& u) const override {
    return 0.5 * cached(x, u).residual.squaredNorm();
  }

  void dynamics_derivs(const VecX& x, const VecX& u, MatX& fx,
                       MatX& fu) const override {
    sweep(x, u);
    fx = fx_;
    fu = fu_;
  }

  void cost_derivs(const VecX& x, const VecX& u, VecX& lx, VecX& lu, MatX& lxx,
                   MatX& lux, MatX& luu) const override {
    sweep(x, u);
    const VecX r = cached(x, u).residual;
    lx = jrx_.transpose() * r;
    lxx = jrx_.transpose() * jrx_;
    if (nu() > 0) {
      lu = jru_.transpose() * r;
      lux = jru_.transpose() * jrx_;
      luu = jru_.transpose() * jru_;
    } else {
      lu.resize(0);
      lux.resize(0, nx());
      luu.resize(0, 0);
    }
  }

  VecX retract(const VecX& x, const VecX& dx) const override {
    VecX out(nq_ + nv_);
    out.head(nq_) = integrate_q(model_, x.head(nq_), dx.head(nv_));
    out.tail(nv_) = x.tail(nv_) + dx.tail(nv_);
    return out;
  }

  VecX difference(const VecX& a, const VecX& b) const override {
    VecX out(2 * nv_);
    out.head(nv_) = difference_q(model_, a.head(nq_), b.head(nq_));
    out.tail(nv_) = a.tail(nv_) - b.tail(nv_);
    return out;
  }

  const std::vector<int>& feet() const { return feet_; }
  bool impulse() const { return impulse_; }
  int knot() const { return knot_; }

 private:
  const NodeEval& cached(const VecX& x, const VecX& u) const {
    if (cache_valid_ && cache_x_.size() == x.size() && cache_x_ == x &&
        cache_u_.size() == u.size() && cache_u_ == u) {
      return cache_;
    }
    cache_ = evaluate(x, u);
    cache_x_ = x;
    cache_u_ = u;
    cache_valid_ = true;
    return cache_;
  }

  void sweep(const VecX& x, const VecX& u) const {
    if (sweep_valid_ && sweep_x_.size() == x.size() && sweep_x_ == x &&
        sweep_u_.size() == u.size() && sweep_u_ == u) {
      return;
    }
    const double h = 1e-6;
    const NodeEval base = cached(x, u);
    const int nr = static_cast<int>(base.residual.size());
    fx_.resize(nx(), nx());
    jrx_.resize(nr, nx());
    for (int k = 0; k < nx(); ++k) {
      VecX dx = VecX::Zero(nx());
      dx[k] = h;
      const NodeEval ep = evaluate(retract(x, dx), u);
      dx[k] = -h;
      const NodeEval em = evaluate(retract(x, dx), u);
      fx_.col(k) = difference(ep.x_next, em.x_next) / (2 * h);
      jrx_.col(k) = (ep.residual - em.residual) / (2 * h);
    }
    fu_.resize(nx(), nu());
    jru_.resize(nr, nu());
    for (int k = 0; k < nu(); ++k) {
      VecX du = u;
      du[k] += h;
      const NodeEval ep = evaluate(x, du);
      du[k] -= 2 * h;
      const NodeEval em = evaluate(x, du);
      fu_.col(k) = difference(ep.x_next, em.x_next) / (2 * h);
      jru_.col(k) = (ep.residual - em.residual) / (2 * h);
    }
    sweep_x_ = x;
    sweep_u_ = u;
    sweep_valid_ = true;
  }

  const RobotModel& model_;
  WbdWeights weights_;
  Vec3 gravity_;
  double friction_;
  double dt_;
  int knot_;
  bool impulse_;
  TrackingRef ref_;
  std::vector<int> feet_;
  int nq_ = 0, nv_ = 0, nj_ = 0;

  mutable bool cache_valid_ = false;
  mutable VecX cache_x_, cache_u_;
  mutable NodeEval cache_;
  mutable bool sweep_valid_ = false;
  mutable VecX sweep_x_, sweep_u_;
  mutable MatX fx_, fu_, jrx_, jru_;
};

int resolve_threads(int requested) {
  if (requested > 0) return requested;
  if (const char* env = std::getenv("QUADPLAN_THREADS")) {
    const int n = std::atoi(env);
    if (n > 0) return n;
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : std::min(8u, hw);
}

}  // namespace

WbdProblem make_wbd_problem(const RobotModel& model, const ContactSchedule& schedule,
                            const CentroidalTrajectory& cen, const WbdWeights& weights,
                            const VecX& q0, const VecX& v0, const Vec3& gravity,
                            double friction) {
  if (cen.size() != schedule.n_knots) {
    throw WbdError("centroidal reference length does not match the schedule");
  }
  WbdProblem p;
  p.model = &model;
  p.schedule = schedule;
  p.gravity = gravity;
  p.friction = friction;
  p.weights = weights;
  p.q0 = q0;
  p.v0 = v0;
  p.refs.resize(cen.size());
  for (int i = 0; i < cen.size(); ++i) {
    const CentroidalKnot& k = cen.knots[i];
    p.refs[i].r = k.r;
    p.refs[i].h.head<3>() = model.total_mass * k.rd;
    p.refs[i].h.tail<3>() = k.l;
    p.refs[i].theta = k.theta;
    for (int j = 0; j < 4; ++j) p.refs[i].p[j] = k.p[j];
  }
  return p;
}

HybridOcp build_ocp(const WbdProblem& problem) {
  problem.schedule.validate();
  if (static_cast<int>(problem.refs.size()) != problem.schedule.n_knots) {
    throw WbdError("reference length does not match the schedule");
  }
  HybridOcp ocp;
  ocp.dt = problem.schedule.dt;
  const int N = problem.schedule.n_knots;
  for (int i = 0; i < N; ++i) {
    bool touchdown = false;
    for (int j = 0; j < problem.schedule.n_feet(); ++j) {
      for (int td : problem.schedule.touchdown_knots(j)) {
        if (td == i) touchdown = true;
      }
    }
    if (touchdown) {
      ocp.nodes.push_back(std::make_unique<WbdNode>(problem, i, true));
      ocp.knot_of_node.push_back(i);
      ocp.is_impulse.push_back(true);
    }
    ocp.nodes.push_back(std::make_unique<WbdNode>(problem, i, false));
    ocp.knot_of_node.push_back(i);
    ocp.is_impulse.push_back(false);
  }
  const RobotModel& model = *problem.model;
  ocp.state_side_quantities = model.n_q() + model.n_v() + 3 * model.n_f();
  ocp.control_count = model.n_j();
  ocp.x0.resize(model.n_q() + model.n_v());
  ocp.x0 << problem.q0, problem.v0;

  const TrackingRef ref_T = problem.refs.back();
  const WbdWeights w = problem.weights;
  const RobotModel* model_ptr = problem.model;
  auto terminal_residual = [model_ptr, ref_T, w](const VecX& x) -> VecX {
    const int nq = model_ptr->n_q(), nv = model_ptr->n_v();
    const VecX q = x.head(nq);
    const VecX v = x.tail(nv);
    const Kinematics kin = forward_kinematics(*model_ptr, q);
    const Vec6 h = centroidal_momentum_matrix(*model_ptr, q) * v;
    VecX r(3 + 6 + 12 + nv + 3);
    int at = 0;
    const double s = std::sqrt(w.terminal_scale);
    r.segment<3>(at) = s * std::sqrt(w.track_com) * (kin.com - ref_T.r);
    at += 3;
    r.segment<3>(at) =
        s * std::sqrt(w.track_lin_momentum) * (h.head<3>() - ref_T.h.head<3>());
    at += 3;
    r.segment<3>(at) =
        s * std::sqrt(w.track_ang_momentum) * (h.tail<3>() - ref_T.h.tail<3>());
    at += 3;
    for (int j = 0; j < 4; ++j) {
      r.segment<3>(at) = s * std::sqrt(w.track_foot) * (kin.foot[j] - ref_T.p[j]);
      at += 3;
    }
    r.segment(at, nv) = std::sqrt(w.joint_vel_reg) * v;
    at += nv;
    if (w.terminal_base_rotvec && w.terminal_orientation > 0.0) {
      const Quat quat(q[3], q[4], q[5], q[6]);
      const Quat goal = quat_exp(*w.terminal_base_rotvec);
      r.segment<3>(at) =
          std::sqrt(w.terminal_orientation) * quat_boxminus(quat, goal);
    } else {
      r.segment<3>(at).setZero();
    }
    return r;
  };
  auto difference = [model_ptr](const VecX& a, const VecX& b) -> VecX {
    const int nq = model_ptr->n_q(), nv = model_ptr->n_v();
    VecX out(2 * nv);
    out.head(nv) = difference_q(*model_ptr, a.head(nq), b.head(nq));
    out.tail(nv) = a.tail(nv) - b.tail(nv);
    return out;
  };
  auto retract = [model_ptr](const VecX& x, const VecX& dx) -> VecX {
    const int nq = model_ptr->n_q(), nv = model_ptr->n_v();
    VecX out(nq + nv);
    out.head(nq) = integrate_q(*model_ptr, x.head(nq), dx.head(nv));
    out.tail(nv) = x.tail(nv) + dx.tail(nv);
    return out;
  };
  ocp.terminal.cost = [terminal_residual](const VecX& x) {
    return 0.5 * terminal_residual(x).squaredNorm();
  };
  ocp.terminal.derivs = [terminal_residual, retract, model_ptr](
                            const VecX& x, VecX& lx, MatX& lxx) {
    const int nx = 2 * model_ptr->n_v();
    const VecX r0 = terminal_residual(x);
    MatX J(r0.size(), nx);
    const double h = 1e-6;
    for (int k = 0; k < nx; ++k) {
      VecX dx = VecX::Zero(nx);
      dx[k] = h;
      const VecX rp = terminal_residual(retract(x, dx));
      dx[k] = -h;
      const VecX rm = terminal_residual(retract(x, dx));
      J.col(k) = (rp - rm) / (2 * h);
    }
    lx = J.transpose() * r0;
    lxx = J.transpose() * J;
  };
  return ocp;
}

VecX ik_solve(const RobotModel& model, const Vec3& com_target,
              const std::array<Vec3, 4>& foot_targets, const Quat& base_orientation,
              const VecX& q_init, int iterations) {
  VecX q = q_init;
  q[3] = base_orientation.w();
  q[4] = base_orientation.x();
  q[5] = base_orientation.y();
  q[6] = base_orientation.z();
  std::vector<int> all_feet(model.n_f());
  for (int j = 0; j < model.n_f(); ++j) all_feet[j] = j;
  // unknowns: base position and joints (base orientation prescribed)
  std::vector<int> cols = {0, 1, 2};
  for (int j = 0; j < model.n_j(); ++j) cols.push_back(6 + j);
  const int nu = static_cast<int>(cols.size());
  for (int it = 0; it < iterations; ++it) {
    const Kinematics kin = forward_kinematics(model, q);
    VecX err(3 + 12);
    err.head<3>() = com_target - kin.com;
    const MatX A = centroidal_momentum_matrix(model, q);
    const MatX Jc = contact_jacobian(model, q, all_feet);
    for (int j = 0; j < 4; ++j) {
      err.segment<3>(3 + 3 * j) = foot_targets[j] - kin.foot[j];
    }
    MatX J(15, nu);
    for (int c = 0; c < nu; ++c) {
      J.block<3, 1>(0, c) = A.block<3, 1>(0, cols[c]) / model.total_mass;
      for (int j = 0; j < 4; ++j) {
        J.block<3, 1>(3 + 3 * j, c) = Jc.block<3, 1>(3 * j, cols[c]);
      }
    }
    MatX H = J.transpose() * J;
    H.diagonal().array() += 1e-6;
    const VecX step = H.llt().solve(J.transpose() * err);
    if (!step.allFinite()) break;
    VecX dq = VecX::Zero(model.n_v());
    for (int c = 0; c < nu; ++c) dq[cols[c]] = step[c];
    q = integrate_q(model, q, dq);
    for (int j = 0; j < model.n_j(); ++j) {
      q[7 + j] = std::min(std::max(q[7 + j], model.joint_lower[j] + 1e-3),
                          model.joint_upper[j] - 1e-3);
    }
    if (err.norm() < 1e-10) break;
  }
  return q;
}

WholeBodyTrajectory ddp_solve(const HybridOcp& ocp, const WbdProblem& problem,
                              const WholeBodyTrajectory* guess,
                              DdpDiagnostics* diag, const DdpOptions& options) {
  const auto t_start = std::chrono::steady_clock::now();
  const RobotModel& model = *problem.model;
  const int T = ocp.n_nodes();

  std::vector<IlqrNode*> raw(T);
  for (int t = 0; t < T; ++t) raw[t] = ocp.nodes[t].get();

  // initial controls: from the guess trajectory when given, otherwise a
  // PD-stabilized rollout around quasi-static inverse-kinematics references
  // (so the solver's own initial rollout stays near the plan)
  std::vector<VecX> u0(T);
  if (guess) {
    for (int t = 0; t < T; ++t) {
      const int knot = ocp.knot_of_node[t];
      u0[t] = ocp.is_impulse[t] ? VecX::Zero(0) : guess->knots[knot].tau;
    }
  } else {
    // per-knot IK joint references and quasi-static torques
    std::vector<VecX> q_ik(problem.schedule.n_knots);
    std::vector<VecX> tau_qs(problem.schedule.n_knots);
    VecX q_seed = problem.q0;
    for (int knot = 0; knot < problem.schedule.n_knots; ++knot) {
      // follow the reference attitude so rotating motions keep sane leg poses
      const Quat base = quat_from_euler_zyx(problem.refs[knot].theta);
      q_ik[knot] = ik_solve(model, problem.refs[knot].r, problem.refs[knot].p,
                            base, q_seed, 25);
      q_seed = q_ik[knot];
      const auto stance = problem.schedule.stance_feet(knot);
      VecX f = VecX::Zero(3 * model.n_f());
      if (!stance.empty()) {
        const MatX Jc = contact_jacobian(model, q_ik[knot], stance);
        const MatX A = Jc.leftCols(6).transpose();  // 6 x 3k
        const VecX b = nonlinear_effects(model, q_ik[knot],
                                         VecX::Zero(model.n_v()), problem.gravity)
                           .head<6>();
        const VecX f_stance =
            A.jacobiSvd(Eigen::ComputeThinU | Eigen::ComputeThinV).solve(b);
        for (size_t idx = 0; idx < stance.size(); ++idx) {
          f.segment<3>(3 * stance[idx]) = f_stance.segment<3>(3 * idx);
        }
      }
      tau_qs[knot] = inverse_dynamics(model, q_ik[knot], VecX::Zero(model.n_v()),
                                      VecX::Zero(model.n_v()), f, problem.gravity)
                         .tau;
    }
    for (int t = 0; t < T; ++t) {
      u0[t] = ocp.is_impulse[t] ? VecX::Zero(0) : tau_qs[ocp.knot_of_node[t]];
    }
    // stabilized rollout recording the applied torques; gains per joint,
    // scaled by the apparent joint inertia to stay stable at the node rate
    const MatX M0 = mass_matrix(model, problem.q0);
    const double omega_max = 0.5 / ocp.dt;
    VecX kp(model.n_j()), kd(model.n_j());
    for (int j = 0; j < model.n_j(); ++j) {
      const double inertia = M0(6 + j, 6 + j);
      kp[j] = omega_max * omega_max * inertia;
      kd[j] = 1.4 * std::sqrt(kp[j] * inertia);
    }
    VecX x = ocp.x0;
    const int nq = model.n_q();
    for (int t = 0; t < T; ++t) {
      auto* node = static_cast<WbdNode*>(ocp.nodes[t].get());
      if (!ocp.is_impulse[t]) {
        const int knot = ocp.knot_of_node[t];
        VecX u = tau_qs[knot];
        for (int j = 0; j < model.n_j(); ++j) {
          u[j] += kp[j] * (q_ik[knot][7 + j] - x[7 + j]) - kd[j] * x[nq + 6 + j];
          u[j] = std::min(std::max(u[j], -model.torque_limit[j]),
                          model.torque_limit[j]);
        }
        u0[t] = u;
      }
      const VecX x_next = node->dynamics(x, u0[t]);
      if (!x_next.allFinite()) break;  // keep the remaining quasi-static guess
      x = x_next;
    }
  }

  IlqrOptions iopt;
  iopt.max_iterations = options.max_iterations;
  iopt.tol_grad = options.tol_grad;
  iopt.tol_cost = options.tol_cost;
  iopt.n_threads = resolve_threads(options.n_threads);
  iopt.verbose = options.verbose;
  IlqrResult res = ilqr_solve(raw, ocp.terminal, ocp.x0, u0, iopt);

  WholeBodyTrajectory traj;
  traj.dt = ocp.dt;
  traj.knots.resize(problem.schedule.n_knots);
  for (int t = 0; t < T; ++t) {
    auto* node = static_cast<WbdNode*>(raw[t]);
    const int knot = ocp.knot_of_node[t];
    const NodeEval ev = node->evaluate(res.x[t], res.u[t]);
    if (ocp.is_impulse[t]) {
      ImpulseEvent event;
      event.knot = knot;
      event.feet = node->feet();
      event.impulses = ev.forces;
      traj.impulses.push_back(event);
      continue;
    }
    WholeBodyKnot& k = traj.knots[knot];
    k.q = res.x[t].head(model.n_q());
    k.v = res.x[t].tail(model.n_v());
    k.tau = res.u[t];
    k.forces = VecX::Zero(3 * model.n_f());
    const auto& feet = node->feet();
    for (size_t idx = 0; idx < feet.size(); ++idx) {
      k.forces.segment<3>(3 * feet[idx]) = ev.forces.segment<3>(3 * idx);
    }
  }
  traj.q_final = res.x[T].head(model.n_q());
  traj.v_final = res.x[T].tail(model.n_v());

  if (diag) {
    diag->iterations = res.iterations;
    diag->converged = res.converged;
    diag->cost = res.cost;
    diag->grad_norm = res.grad_norm;
    diag->cost_trace = res.cost_trace;
    diag->reg_trace = res.reg_trace;
    diag->hessians_spd = res.hessians_spd;
    diag->seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start)
            .count();
  }
  return traj;
}

}  // namespace quad
