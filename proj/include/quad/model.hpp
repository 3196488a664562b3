#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "quad/types.hpp"

namespace quad {

struct ModelError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DegenerateContact : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class JointType { kFloating, kRevolute };

struct Link {
  std::string name;
  int parent = -1;                 // -1 only for the floating base (link 0)
  JointType joint = JointType::kRevolute;
  Vec3 axis = Vec3::UnitZ();       // parent frame
  Vec3 origin = Vec3::Zero();      // joint anchor, parent frame
  double mass = 0.0;
  Vec3 com = Vec3::Zero();         // link frame
  Mat3 inertia = Mat3::Zero();     // about link com, link frame
};

struct Foot {
  std::string name;
  int link = -1;
  Vec3 offset = Vec3::Zero();      // link frame
};

// Floating-base kinematic tree with point feet.
//
// Coordinates: q = [p_b (3), quat (w,x,y,z), q_j (n_j)], world-frame base pose.
// Velocities:  v = [v_b (3, world), omega_b (3, world), qdot_j (n_j)].
struct RobotModel {
  std::string name;
  std::vector<Link> links;
  std::vector<Foot> feet;
  std::vector<int> joint_index;    // per link; -1 for base
  VecX joint_lower, joint_upper;   // n_j
  VecX torque_limit;               // n_j
  VecX home_joints;                // n_j, nominal standing pose
  double friction = 0.7;
  double total_mass = 0.0;

  int n_links() const { return static_cast<int>(links.size()); }
  int n_j() const { return n_links() - 1; }
  int n_q() const { return 7 + n_j(); }
  int n_v() const { return 6 + n_j(); }
  int n_f() const { return static_cast<int>(feet.size()); }

  void finalize();                 // fills joint_index/total_mass, validates
};

RobotModel load_model(const std::string& path);
RobotModel parse_model(const std::string& json_text);

struct GeneralizedState {
  VecX q;
  VecX v;
};

// Base at origin, identity orientation, home joint pose, zero velocity.
GeneralizedState neutral_state(const RobotModel& model);
void validate_q(const RobotModel& model, const VecX& q);

struct ContactSet {
  std::vector<int> feet;           // distinct indices in [0, n_f)
  std::vector<Vec3> points;        // world contact points (informational)
  std::vector<Vec3> normals;       // world, unit
  int size() const { return static_cast<int>(feet.size()); }
};

struct Kinematics {
  std::vector<Mat3> R;             // link world rotations
  std::vector<Vec3> p;             // link frame origins, world
  std::vector<Vec3> com_link;      // link com, world
  std::vector<Vec3> axis_w;        // joint axis, world (base: zero)
  Vec3 com = Vec3::Zero();         // robot com, world
  std::vector<Vec3> foot;          // foot positions, world
};

Kinematics forward_kinematics(const RobotModel& model, const VecX& q);

MatX mass_matrix(const RobotModel& model, const VecX& q);

// Gravity plus velocity-product generalized forces; with v = 0 the linear base
// rows equal -m*g (so +m*9.81 upward for default gravity).
VecX nonlinear_effects(const RobotModel& model, const VecX& q, const VecX& v,
                       const Vec3& gravity = Vec3(0, 0, -kDefaultGravity));

// 6 x n_v map, h = A(q) v = [k; l] about the instantaneous com, world frame.
MatX centroidal_momentum_matrix(const RobotModel& model, const VecX& q);

// Directional derivative of A(q)v with respect to a configuration tangent:
// column j is d(A(q)v)/d(delta_j). 6 x n_v.
MatX cmm_configuration_derivative(const RobotModel& model, const VecX& q,
                                  const VecX& v);

// Rotational inertia of the joint-locked robot about its com, world frame.
Mat3 crb_inertia(const RobotModel& model, const VecX& q);

// Stacked point-contact Jacobian (3 rows per foot) and its bias term Jdot*v.
MatX contact_jacobian(const RobotModel& model, const VecX& q,
                      const std::vector<int>& feet);
VecX contact_bias_acceleration(const RobotModel& model, const VecX& q,
                               const VecX& v, const std::vector<int>& feet);

struct ContactDynamicsResult {
  VecX vdot;
  VecX forces;                     // 3 per active foot, world
};

// Solves M vdot = B tau - C + Jc^T F with Jc vdot + Jcdot v = 0.
ContactDynamicsResult contact_forward_dynamics(
    const RobotModel& model, const VecX& q, const VecX& v, const VecX& tau,
    const ContactSet& contacts, const Vec3& gravity = Vec3(0, 0, -kDefaultGravity));

struct ImpactResult {
  VecX v_plus;
  VecX impulses;                   // 3 per active foot
};

// Plastic impact: M(v+ - v-) = Jc^T Lambda with Jc v+ = 0.
ImpactResult impact_dynamics(const RobotModel& model, const VecX& q,
                             const VecX& v_minus, const ContactSet& contacts);

struct InverseDynamicsResult {
  VecX tau;                        // n_j
  Vec6 base_residual;              // unactuated rows of the balance, diagnostic
};

// foot_forces stacked 3 per foot for all n_f feet (zeros for swing feet).
InverseDynamicsResult inverse_dynamics(
    const RobotModel& model, const VecX& q, const VecX& v, const VecX& vdot_des,
    const VecX& foot_forces, const Vec3& gravity = Vec3(0, 0, -kDefaultGravity));

// Manifold helpers for q (quaternion block uses world-frame exp/log).
VecX integrate_q(const RobotModel& model, const VecX& q, const VecX& dq);
VecX difference_q(const RobotModel& model, const VecX& q1, const VecX& q0);

}  // namespace quad
