#pragma once

#include <random>

#include "quad/model.hpp"

namespace quad::testutil {

inline RobotModel bundled_model() {
  return load_model(std::string(QUAD_ASSET_DIR) + "/quadruped.json");
}

inline VecX random_q(const RobotModel& model, std::mt19937& rng,
                     double base_range = 0.5) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::normal_distribution<double> n(0.0, 1.0);
  VecX q(model.n_q());
  for (int i = 0; i < 3; ++i) q[i] = base_range * u(rng);
  Eigen::Vector4d quat(n(rng), n(rng), n(rng), n(rng));
  quat.normalize();
  q.segment<4>(3) = quat;
  for (int j = 0; j < model.n_j(); ++j) {
    const double lo = model.joint_lower[j], hi = model.joint_upper[j];
    // stay a little inside the limits to avoid kinematic singularities
    const double mid = 0.5 * (lo + hi), half = 0.4 * (hi - lo);
    q[7 + j] = mid + half * u(rng);
  }
  return q;
}

inline VecX random_v(const RobotModel& model, std::mt19937& rng, double scale = 1.0) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  VecX v(model.n_v());
  for (int i = 0; i < v.size(); ++i) v[i] = scale * u(rng);
  return v;
}

// Independent per-link velocity recursion: walks the joint path explicitly
// without any spatial-algebra machinery. Returns angular velocity and the
// velocity of a given world point rigidly attached to the link.
struct LinkMotion {
  Vec3 omega;
  Vec3 point_velocity;
};

inline LinkMotion link_point_velocity(const RobotModel& model, const VecX& q,
                                      const VecX& v, int link,
                                      const Vec3& world_point) {
  const Kinematics kin = forward_kinematics(model, q);
  // collect chain base -> link
  std::vector<int> chain;
  for (int i = link; i > 0; i = model.links[i].parent) chain.push_back(i);
  Vec3 omega = v.segment<3>(3);
  Vec3 vel = v.head<3>() + omega.cross(world_point - q.head<3>());
  for (int i : chain) {
    const double rate = v[6 + model.joint_index[i]];
    const Vec3 axis = kin.axis_w[i];
    const Vec3 anchor = kin.p[i];
    omega += rate * axis;
    vel += rate * axis.cross(world_point - anchor);
  }
  return {omega, vel};
}

// Sum of transported link spatial momenta about the robot com, world frame.
inline Vec6 momentum_oracle(const RobotModel& model, const VecX& q, const VecX& v) {
  const Kinematics kin = forward_kinematics(model, q);
  Vec3 k = Vec3::Zero(), l = Vec3::Zero();
  for (int i = 0; i < model.n_links(); ++i) {
    const LinkMotion m = link_point_velocity(model, q, v, i, kin.com_link[i]);
    const Mat3 I_w = kin.R[i] * model.links[i].inertia * kin.R[i].transpose();
    const Vec3 p_i = model.links[i].mass * m.point_velocity;
    k += p_i;
    l += I_w * m.omega + (kin.com_link[i] - kin.com).cross(p_i);
  }
  Vec6 h;
  h << k, l;
  return h;
}

inline double kinetic_energy_oracle(const RobotModel& model, const VecX& q,
                                    const VecX& v) {
  const Kinematics kin = forward_kinematics(model, q);
  double ke = 0.0;
  for (int i = 0; i < model.n_links(); ++i) {
    const LinkMotion m = link_point_velocity(model, q, v, i, kin.com_link[i]);
    const Mat3 I_w = kin.R[i] * model.links[i].inertia * kin.R[i].transpose();
    ke += 0.5 * model.links[i].mass * m.point_velocity.squaredNorm() +
          0.5 * m.omega.dot(I_w * m.omega);
  }
  return ke;
}

}  // namespace quad::testutil
