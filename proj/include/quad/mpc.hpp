#pragma once

#include <array>
#include <optional>

#include "quad/model.hpp"
#include "quad/solvers/qp.hpp"

namespace quad {

struct MpcError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Augmented state x = [h(6), q_b(6: p_b, theta_b ZYX), q_j(12), qd_j(12), g(3)].
inline constexpr int kMpcStateDim = 39;
// Control u = [f_0..f_3 (12, world), a (12 joint accelerations)].
inline constexpr int kMpcControlDim = 24;

struct EulerTransform {
  Mat3 W;    // omega -> euler rates
  Mat6 T_b;  // blockdiag(I3, W)
};
// Throws EulerSingularity when |pitch| is within the guard of pi/2.
EulerTransform euler_rate_transform(const Vec3& theta_b);

struct TransformedCmms {
  Eigen::Matrix<double, 6, 6> Ah;   // T_b A_b^-1
  Eigen::Matrix<double, 6, 12> Aj;  // -T_b A_b^-1 A_j
};
TransformedCmms transformed_cmms(const RobotModel& model, const VecX& q);

// Builds x from a full-order state.
VecX augmented_state(const RobotModel& model, const VecX& q, const VecX& v,
                     const Vec3& gravity);

struct MpcReferenceKnot {
  VecX q;                      // full configuration (for the frozen CMMs)
  Vec3 r = Vec3::Zero();       // com
  std::array<Vec3, 4> p;       // feet, world
  std::array<bool, 4> stance = {false, false, false, false};
  std::array<Vec3, 4> normal = {Vec3::UnitZ(), Vec3::UnitZ(), Vec3::UnitZ(),
                                Vec3::UnitZ()};
  VecX x_ref;                  // 39-dim target at this knot
};

// Frozen-reference continuous dynamics xdot = H x + G u.
void continuous_matrices(const RobotModel& model, const MpcReferenceKnot& ref,
                         MatX& H, MatX& G);

// Exact discretization through the augmented matrix exponential.
void discretize(const MatX& H, const MatX& G, double dt, MatX& Hd, MatX& Gd);

// Stacks n steps: x_vec = HA x_k + GA u_vec.
void condense(const std::vector<MatX>& Hd, const std::vector<MatX>& Gd, MatX& HA,
              MatX& GA);

struct MpcConfig {
  int horizon = 5;
  double dt = 0.01;
  VecX state_weights;    // 39, gravity rows forced to zero
  VecX control_weights;  // 24
  double friction = 0.7;
  double f_max = 250.0;
  double a_max = 500.0;
  double qp_tol = 1e-7;
};

struct MpcQp {
  QpProblem qp;
  MatX HA, GA;
  VecX x_ref_stack;  // 39 n
};

// One prediction step per window entry; knots index into the reference
// trajectory (per-leg entries let touchdown shifts advance legs separately).
struct WindowStep {
  int base_knot = 0;
  std::array<int, 4> leg_knot = {0, 0, 0, 0};
};

class MpcController {
 public:
  MpcController(const RobotModel& model, const MpcConfig& config,
                std::vector<MpcReferenceKnot> reference);

  struct StepResult {
    bool feasible = false;
    VecX u;  // first control of the optimal sequence (24)
    double solve_ms = 0.0;
    double cost = 0.0;
    double kkt_stationarity = 0.0;
    double kkt_primal = 0.0;
    double kkt_complementarity = 0.0;
    int qp_iterations = 0;
  };

  StepResult step(const VecX& x_k, const std::vector<WindowStep>& window);

  // Builds the dense QP for a window without solving (testing/inspection).
  MpcQp build_qp(const VecX& x_k, const std::vector<WindowStep>& window) const;

  int reference_size() const { return static_cast<int>(reference_.size()); }
  const MpcReferenceKnot& reference(int i) const { return reference_.at(i); }
  const MpcConfig& config() const { return config_; }

 private:
  struct Discretized {
    MatX Hd, Gd;
  };
  const Discretized& cached(int knot) const;
  void assemble_step(const WindowStep& ws, MatX& Hd, MatX& Gd,
                     VecX& x_target) const;

  const RobotModel& model_;
  MpcConfig config_;
  std::vector<MpcReferenceKnot> reference_;
  mutable std::vector<std::optional<Discretized>> cache_;
  VecX warm_u_;  // previous solution, shifted
  VecX warm_y_;
};

}  // namespace quad
