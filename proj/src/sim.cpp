#include "quad/sim.hpp"

#include <cmath>

#include "quad/euler.hpp"

namespace quad {

GeneralizedState sim_step(const RobotModel& model, const GeneralizedState& state,
                          const VecX& tau, const TerrainMap& terrain,
                          const SimConfig& config, ContactSample* sample,
                          ContactMemory* memory) {
  const VecX& q = state.q;
  const VecX& v = state.v;
  std::vector<int> all_feet(model.n_f());
  for (int j = 0; j < model.n_f(); ++j) all_feet[j] = j;
  const Kinematics kin = forward_kinematics(model, q);
  const MatX Jc = contact_jacobian(model, q, all_feet);

  const MatX M = mass_matrix(model, q);
  Eigen::LLT<MatX> M_llt(M);

  VecX f_ext = VecX::Zero(3 * model.n_f());
  for (int j = 0; j < model.n_f(); ++j) {
    if (!terrain.defined()) break;
    const Vec3 p = kin.foot[j];
    const double ground = terrain.height(p.x(), p.y());
    const Vec3 n = terrain.normal(p.x(), p.y());
    const double pen = (ground - p.z()) * n.z();  // depth along the normal
    if (pen <= 0.0) {
      if (memory) memory->active[j] = false;
      continue;
    }
    // damping capped by the apparent foot mass so one explicit step can
    // never reverse the relative velocity
    const MatX Jf = Jc.middleRows(3 * j, 3);
    const Mat3 S = Jf * M_llt.solve(Jf.transpose());
    const double m_eff = 1.0 / S.trace() * 3.0;
    const double d_eff =
        std::min(config.contact_damping, 0.5 * m_eff / config.dt);
    const Vec3 v_foot = Jf * v;
    const double pen_rate = -v_foot.dot(n);
    const double fn =
        std::max(0.0, config.contact_stiffness * pen + d_eff * pen_rate);
    Vec3 f = fn * n;
    const Vec3 v_t = v_foot - v_foot.dot(n) * n;
    Vec3 f_t = -d_eff * v_t;
    if (memory) {
      if (!memory->active[j]) {
        memory->active[j] = true;
        memory->anchor[j] = p;
      }
      Vec3 slip = p - memory->anchor[j];
      slip -= slip.dot(n) * n;
      f_t -= config.tangent_stiffness * slip;
    }
    const double mu = terrain.friction(p.x(), p.y());
    const double f_t_max = mu * fn;
    if (f_t.norm() > f_t_max) {
      f_t *= f_t_max / f_t.norm();
      // slipping: drag the anchor to the friction boundary
      if (memory && config.tangent_stiffness > 0.0) {
        Vec3 slip = p - memory->anchor[j];
        slip -= slip.dot(n) * n;
        const Vec3 f_spring = -config.tangent_stiffness * slip;
        const double excess = f_spring.norm() - f_t_max;
        if (excess > 0.0 && f_spring.norm() > 1e-12) {
          memory->anchor[j] += (excess / config.tangent_stiffness) *
                               (-f_spring / f_spring.norm());
        }
      }
    }
    f += f_t;
    f_ext.segment<3>(3 * j) = f;
    if (sample) {
      sample->force[j] = f;
      sample->penetration[j] = pen;
    }
  }

  VecX rhs = -nonlinear_effects(model, q, v, config.gravity);
  rhs.tail(model.n_j()) += tau;
  rhs.noalias() += Jc.transpose() * f_ext;
  const VecX vdot = M_llt.solve(rhs);

  GeneralizedState next;
  next.v = v + config.dt * vdot;
  next.q = integrate_q(model, q, config.dt * next.v);
  if (!next.q.allFinite() || !next.v.allFinite()) {
    throw SimError("simulation produced a non-finite state");
  }
  return next;
}

std::optional<int> detect_velocity_drop(const std::vector<double>& history,
                                        double threshold, int window) {
  for (int i = window; i < static_cast<int>(history.size()); ++i) {
    if (std::abs(history[i] - history[i - window]) > threshold) return i;
  }
  return std::nullopt;
}

namespace {

// first touchdown knot per leg (one flight per leg assumed for shifting)
std::array<int, 4> nominal_touchdown_knots(const ContactSchedule& schedule) {
  std::array<int, 4> out = {-1, -1, -1, -1};
  for (int j = 0; j < schedule.n_feet() && j < 4; ++j) {
    const auto tds = schedule.touchdown_knots(j);
    if (!tds.empty()) out[j] = tds.front();
  }
  return out;
}

}  // namespace

ReferenceOffsets shift_reference(const ContactSchedule& schedule,
                                 const std::vector<TouchdownEvent>& events,
                                 double time) {
  ReferenceOffsets out;
  const std::array<int, 4> nominal = nominal_touchdown_knots(schedule);
  std::array<bool, 4> landed = {false, false, false, false};
  for (int j = 0; j < 4; ++j) {
    if (nominal[j] < 0) {
      landed[j] = true;  // no touchdown scheduled
      continue;
    }
    const double t_nominal = nominal[j] * schedule.dt;
    for (const TouchdownEvent& ev : events) {
      if (ev.leg != j) continue;
      landed[j] = true;
      out.leg[j] = std::max(out.leg[j], t_nominal - ev.time);
    }
    if (time >= t_nominal) landed[j] = true;  // nominal-time landing
  }
  if (landed[0] && landed[1] && landed[2] && landed[3]) {
    out.global = std::max({out.leg[0], out.leg[1], out.leg[2], out.leg[3]});
  }
  return out;
}

TouchdownMonitor::TouchdownMonitor(const ContactSchedule& schedule,
                                   const SimConfig& config,
                                   std::array<int, 4> knee_joints)
    : schedule_(schedule), config_(config), knee_(knee_joints) {}

std::vector<TouchdownEvent> TouchdownMonitor::update(double time,
                                                     const VecX& joint_velocities) {
  std::vector<TouchdownEvent> fired;
  const std::array<int, 4> nominal = nominal_touchdown_knots(schedule_);
  for (int j = 0; j < 4; ++j) {
    if (nominal[j] < 0 || latched_[j]) continue;
    const int knot = std::min<int>(schedule_.n_knots - 1,
                                   static_cast<int>(time / schedule_.dt));
    const bool expected_swing = !schedule_.in_stance(j, knot) && knot > 0;
    if (!expected_swing) {
      history_[j].clear();
      continue;
    }
    history_[j].push_back(joint_velocities[knee_[j]]);
    const auto hit =
        detect_velocity_drop(history_[j], config_.td_drop, config_.td_window);
    if (hit) {
      latched_[j] = true;
      fired.push_back({j, time});
    }
  }
  return fired;
}

namespace {

double base_yaw(const VecX& q) {
  return euler_zyx_from_quat(Quat(q[3], q[4], q[5], q[6])).z();
}

double wrap_angle(double a) {
  while (a > M_PI) a -= 2 * M_PI;
  while (a < -M_PI) a += 2 * M_PI;
  return a;
}

}  // namespace

ClosedLoopLog run_closed_loop(const RobotModel& model,
                              const std::vector<MpcReferenceKnot>& reference,
                              const ContactSchedule& schedule,
                              const TerrainMap& terrain,
                              const GeneralizedState& initial,
                              const ClosedLoopConfig& config) {
  if (reference.empty()) throw SimError("empty reference bundle");
  if (config.sim.kp.size() != model.n_j() || config.sim.kd.size() != model.n_j()) {
    throw SimError("PD gains must cover every joint");
  }
  const double ref_dt = schedule.dt;
  const int substeps = std::max(1, static_cast<int>(std::round(
                                       config.mpc.dt / config.sim.dt)));
  const int ticks =
      static_cast<int>(std::round(config.duration / config.mpc.dt));
  const int last_knot = static_cast<int>(reference.size()) - 1;

  MpcController controller(model, config.mpc, reference);
  // knee joints are the third joint of each leg, indexed into the joint block
  TouchdownMonitor monitor(schedule, config.sim, {2, 5, 8, 11});

  ClosedLoopLog log;
  GeneralizedState state = initial;
  ContactMemory contact_memory;
  std::vector<TouchdownEvent> events;
  double yaw_unwrapped = base_yaw(state.q);
  double yaw_prev = yaw_unwrapped;

  for (int tick = 0; tick < ticks; ++tick) {
    const double t = tick * config.mpc.dt;
    const ReferenceOffsets offsets = shift_reference(schedule, events, t);
    auto knot_at = [&](double time_shift) {
      return std::min(last_knot,
                      std::max(0, static_cast<int>(std::round(
                                      (t + time_shift) / ref_dt))));
    };

    VecX tau_ff = VecX::Zero(model.n_j());
    bool mpc_ok = false;
    MpcController::StepResult mpc_res;
    if (config.mode == ControllerMode::kMpcIdPd) {
      std::vector<WindowStep> window(config.mpc.horizon);
      for (int i = 0; i < config.mpc.horizon; ++i) {
        window[i].base_knot = std::min(last_knot, knot_at(offsets.global) + i);
        for (int j = 0; j < 4; ++j) {
          window[i].leg_knot[j] = std::min(last_knot, knot_at(offsets.leg[j]) + i);
        }
      }
      try {
        VecX x_k = augmented_state(model, state.q, state.v, config.sim.gravity);
        // unwrap the measured attitude onto the reference branch
        const VecX& x_near = reference[window[0].base_knot].x_ref;
        for (int idx = 9; idx < 12; ++idx) {
          x_k[idx] +=
              2 * M_PI * std::round((x_near[idx] - x_k[idx]) / (2 * M_PI));
        }
        mpc_res = controller.step(x_k, window);
        mpc_ok = mpc_res.feasible;
      } catch (const std::exception&) {
        mpc_ok = false;  // singular attitude or similar: PD fallback
      }
      if (mpc_ok) {
        // complete the base acceleration from the unactuated rows, then
        // inverse dynamics for the feedforward torque
        const VecX& u = mpc_res.u;
        VecX stacked = u.head(12);
        const MatX M = mass_matrix(model, state.q);
        std::vector<int> all_feet = {0, 1, 2, 3};
        const MatX Jc = contact_jacobian(model, state.q, all_feet);
        const VecX C = nonlinear_effects(model, state.q, state.v,
                                         config.sim.gravity);
        const VecX gen_f = Jc.transpose() * stacked - C;
        const VecX a_j = u.tail(12);
        const Vec6 rhs_b =
            gen_f.head<6>() - M.block(0, 6, 6, 12) * a_j;
        const Vec6 vdot_b = M.topLeftCorner<6, 6>().llt().solve(rhs_b);
        VecX vdot_des(model.n_v());
        vdot_des << vdot_b, a_j;
        tau_ff = inverse_dynamics(model, state.q, state.v, vdot_des, stacked,
                                  config.sim.gravity)
                     .tau;
      }
      log.tick_time.push_back(t);
      log.tick_feasible.push_back(mpc_ok ? 1 : 0);
      log.tick_solve_ms.push_back(mpc_res.solve_ms);
      log.tick_cost.push_back(mpc_res.cost);
      log.tick_kkt_stat.push_back(mpc_res.kkt_stationarity);
      log.tick_kkt_primal.push_back(mpc_res.kkt_primal);
      log.tick_kkt_comp.push_back(mpc_res.kkt_complementarity);
      log.tick_u.push_back(mpc_ok ? mpc_res.u : VecX::Zero(kMpcControlDim));
      log.base_offset.push_back(offsets.global);
    } else {
      log.tick_time.push_back(t);
      log.tick_feasible.push_back(0);
      log.tick_solve_ms.push_back(0.0);
      log.tick_cost.push_back(0.0);
      log.tick_kkt_stat.push_back(0.0);
      log.tick_kkt_primal.push_back(0.0);
      log.tick_kkt_comp.push_back(0.0);
      log.tick_u.push_back(VecX::Zero(kMpcControlDim));
      log.base_offset.push_back(offsets.global);
    }

    for (int s = 0; s < substeps; ++s) {
      const double ts = t + s * config.sim.dt;
      // per-leg PD against the (shifted) joint references
      VecX tau = tau_ff;
      for (int j = 0; j < 4; ++j) {
        const MpcReferenceKnot& leg_ref =
            reference[std::min(last_knot, knot_at(offsets.leg[j]))];
        for (int a = 0; a < 3; ++a) {
          const int jj = 3 * j + a;
          const double q_ref = leg_ref.x_ref[12 + jj];
          const double qd_ref = leg_ref.x_ref[24 + jj];
          tau[jj] += config.sim.kp[jj] * (q_ref - state.q[7 + jj]) +
                     config.sim.kd[jj] * (qd_ref - state.v[6 + jj]);
        }
      }
      for (int jj = 0; jj < model.n_j(); ++jj) {
        tau[jj] = std::min(std::max(tau[jj], -model.torque_limit[jj]),
                           model.torque_limit[jj]);
      }
      state = sim_step(model, state, tau, terrain, config.sim, nullptr,
                       &contact_memory);
      const double yaw_now = base_yaw(state.q);
      yaw_unwrapped += wrap_angle(yaw_now - yaw_prev);
      yaw_prev = yaw_now;

      log.time.push_back(ts + config.sim.dt);
      log.q.push_back(state.q);
      log.v.push_back(state.v);
      log.tau.push_back(tau);
      log.yaw.push_back(yaw_unwrapped);

      const auto fired = monitor.update(ts + config.sim.dt, state.v.tail(12));
      for (const auto& ev : fired) {
        events.push_back(ev);
        log.touchdowns.push_back(ev);
      }
    }
  }
  log.final_yaw = yaw_unwrapped;
  return log;
}

}  // namespace quad
