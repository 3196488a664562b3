#pragma once

#include <optional>

#include "quad/model.hpp"
#include "quad/mpc.hpp"
#include "quad/schedule.hpp"
#include "quad/terrain.hpp"

namespace quad {

struct SimError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct SimConfig {
  double dt = 2e-4;
  double contact_stiffness = 3e4;  // N/m
  double contact_damping = 60.0;   // N s/m, capped by apparent mass
  double tangent_stiffness = 3e4;  // N/m, stick spring
  double friction = 0.7;
  VecX kp, kd;                     // per-joint PD gains (12)
  double td_drop = 4.0;            // knee rate change that flags touchdown, rad/s
  int td_window = 10;              // samples
  Vec3 gravity = Vec3(0, 0, -kDefaultGravity);
};

struct ContactSample {
  std::array<Vec3, 4> force = {Vec3::Zero(), Vec3::Zero(), Vec3::Zero(),
                               Vec3::Zero()};
  std::array<double, 4> penetration = {0, 0, 0, 0};
};

// Stick anchors for the tangential springs; reset when a foot leaves the
// ground, dragged to the friction boundary while slipping.
struct ContactMemory {
  std::array<bool, 4> active = {false, false, false, false};
  std::array<Vec3, 4> anchor = {Vec3::Zero(), Vec3::Zero(), Vec3::Zero(),
                                Vec3::Zero()};
};

// One semi-implicit Euler step with spring-damper ground contact. Without a
// ContactMemory the tangential force is purely viscous.
GeneralizedState sim_step(const RobotModel& model, const GeneralizedState& state,
                          const VecX& tau, const TerrainMap& terrain,
                          const SimConfig& config,
                          ContactSample* sample = nullptr,
                          ContactMemory* memory = nullptr);

// First sample index where the rate drops by more than `threshold` within
// `window` samples, if any.
std::optional<int> detect_velocity_drop(const std::vector<double>& history,
                                        double threshold, int window);

struct TouchdownEvent {
  int leg = 0;
  double time = 0.0;
};

struct ReferenceOffsets {
  std::array<double, 4> leg = {0, 0, 0, 0};
  double global = 0.0;
};

// Per-leg shifts jump each foot reference to its touchdown knot; base and
// momentum references shift only once every leg has landed.
ReferenceOffsets shift_reference(const ContactSchedule& schedule,
                                 const std::vector<TouchdownEvent>& events,
                                 double time);

// Knee-rate touchdown detector with one event per leg per flight.
class TouchdownMonitor {
 public:
  TouchdownMonitor(const ContactSchedule& schedule, const SimConfig& config,
                   std::array<int, 4> knee_joints);
  std::vector<TouchdownEvent> update(double time, const VecX& joint_velocities);

 private:
  ContactSchedule schedule_;
  SimConfig config_;
  std::array<int, 4> knee_;
  std::array<std::vector<double>, 4> history_;
  std::array<bool, 4> latched_ = {false, false, false, false};
};

enum class ControllerMode { kMpcIdPd, kPdOnly };

struct ClosedLoopConfig {
  SimConfig sim;
  MpcConfig mpc;
  ControllerMode mode = ControllerMode::kMpcIdPd;
  double duration = 1.0;
};

struct ClosedLoopLog {
  std::vector<double> time;          // per sim substep
  std::vector<VecX> q, v, tau;
  std::vector<double> yaw;           // unwrapped base yaw
  std::vector<double> tick_time;     // per mpc tick
  std::vector<int> tick_feasible;
  std::vector<double> tick_solve_ms;
  std::vector<double> tick_cost;
  std::vector<double> tick_kkt_stat, tick_kkt_primal, tick_kkt_comp;
  std::vector<VecX> tick_u;
  std::vector<TouchdownEvent> touchdowns;
  std::vector<double> base_offset;   // per tick
  double final_yaw = 0.0;
};

// Fig-style execution pipeline: at every control tick the MPC recomputes
// contact forces and joint accelerations, inverse dynamics turns them into
// feedforward torques, and a joint PD adds feedback. PD-only mode tracks the
// offline joint trajectory without feedforward.
ClosedLoopLog run_closed_loop(const RobotModel& model,
                              const std::vector<MpcReferenceKnot>& reference,
                              const ContactSchedule& schedule,
                              const TerrainMap& terrain,
                              const GeneralizedState& initial,
                              const ClosedLoopConfig& config);

}  // namespace quad
