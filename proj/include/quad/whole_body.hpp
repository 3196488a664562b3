#pragma once

#include <array>
#include <memory>
#include <optional>

#include "quad/centroidal.hpp"
#include "quad/ilqr.hpp"
#include "quad/model.hpp"
#include "quad/schedule.hpp"

namespace quad {

struct WbdError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// C1 quadratic barrier: zero inside [lower, upper], (stiffness/2) d^2 outside.
struct BarrierEval {
  double value = 0.0;
  double derivative = 0.0;
  double second_derivative = 0.0;
};
BarrierEval quadratic_barrier(double value, double lower, double upper,
                              double stiffness);

struct WbdWeights {
  double track_com = 200.0;
  double track_lin_momentum = 2.0;
  double track_ang_momentum = 10.0;
  double track_foot = 400.0;
  double torque_reg = 2e-4;
  double joint_vel_reg = 2e-3;
  double posture_reg = 0.5;
  double terminal_scale = 20.0;  // multiplies the tracking terms at the end
  double terminal_orientation = 0.0;
  std::optional<Vec3> terminal_base_rotvec;  // goal base orientation, log map
  double barrier_limits = 2e2;    // joint and torque limits
  double barrier_friction = 1e-2; // contact force cone
};

struct TrackingRef {
  Vec3 r = Vec3::Zero();
  Vec6 h = Vec6::Zero();
  std::array<Vec3, 4> p;
  Vec3 theta = Vec3::Zero();  // attitude hint (not a tracked quantity)
};

// Quadratic tracking error of one knot against a centroidal reference, with
// an analytic tangent-space gradient (d/dq in the 18-dim tangent, d/dv).
double eval_tracking_cost(const RobotModel& model, const VecX& q, const VecX& v,
                          const TrackingRef& ref, const WbdWeights& weights,
                          VecX* grad_q = nullptr, VecX* grad_v = nullptr);

struct WbdProblem {
  const RobotModel* model = nullptr;
  ContactSchedule schedule;
  Vec3 gravity = Vec3(0, 0, -kDefaultGravity);
  double friction = 0.7;
  std::vector<TrackingRef> refs;  // one per knot
  WbdWeights weights;
  VecX q0, v0;
};

WbdProblem make_wbd_problem(const RobotModel& model, const ContactSchedule& schedule,
                            const CentroidalTrajectory& cen, const WbdWeights& weights,
                            const VecX& q0, const VecX& v0, const Vec3& gravity,
                            double friction);

struct HybridOcp {
  std::vector<std::unique_ptr<IlqrNode>> nodes;  // impulses interleaved
  IlqrTerminal terminal;
  std::vector<int> knot_of_node;
  std::vector<bool> is_impulse;
  VecX x0;
  double dt = 0.0;
  // bookkeeping: per-node state-side quantities (q, qdot, contact forces)
  // and control inputs
  int state_side_quantities = 0;
  int control_count = 0;

  int n_nodes() const { return static_cast<int>(nodes.size()); }
};

HybridOcp build_ocp(const WbdProblem& problem);

struct WholeBodyKnot {
  VecX q, v;
  VecX tau;     // n_j
  VecX forces;  // 3 * n_f, zero rows for swing feet
};

struct ImpulseEvent {
  int knot = 0;
  std::vector<int> feet;
  VecX impulses;  // 3 per listed foot
};

struct WholeBodyTrajectory {
  std::vector<WholeBodyKnot> knots;
  std::vector<ImpulseEvent> impulses;
  double dt = 0.0;
  VecX q_final, v_final;  // state one step past the last knot
  int size() const { return static_cast<int>(knots.size()); }
};

struct DdpDiagnostics {
  int iterations = 0;
  bool converged = false;
  double cost = 0.0;
  double grad_norm = 0.0;
  std::vector<double> cost_trace;
  std::vector<double> reg_trace;
  bool hessians_spd = false;
  double seconds = 0.0;
};

struct DdpOptions {
  int max_iterations = 120;
  double tol_grad = 1e-6;
  double tol_cost = 1e-9;
  int n_threads = 0;  // 0: use QUADPLAN_THREADS or hardware default
  bool verbose = false;
};

WholeBodyTrajectory ddp_solve(const HybridOcp& ocp, const WbdProblem& problem,
                              const WholeBodyTrajectory* guess = nullptr,
                              DdpDiagnostics* diag = nullptr,
                              const DdpOptions& options = {});

// Damped least-squares inverse kinematics toward com/foot targets with the
// base orientation prescribed; used for quasi-static initial guesses.
VecX ik_solve(const RobotModel& model, const Vec3& com_target,
              const std::array<Vec3, 4>& foot_targets, const Quat& base_orientation,
              const VecX& q_init, int iterations = 40);

}  // namespace quad
