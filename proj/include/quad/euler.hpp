#pragma once

#include <stdexcept>

#include "quad/types.hpp"

namespace quad {

// ZYX Euler angles stored as (roll, pitch, yaw): R = Rz(yaw) Ry(pitch) Rx(roll).
// All angular velocities are world-frame.

struct EulerSingularity : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline constexpr double kEulerPitchGuard = M_PI / 2.0 - 1e-3;

Mat3 euler_zyx_to_rot(const Vec3& theta);
Vec3 rot_to_euler_zyx(const Mat3& R);

Quat quat_from_euler_zyx(const Vec3& theta);
Vec3 euler_zyx_from_quat(const Quat& q);

// omega = rate_to_omega(theta) * theta_dot
Mat3 rate_to_omega(const Vec3& theta);
// theta_dot = omega_to_rate(theta) * omega; throws EulerSingularity near |pitch| = pi/2
Mat3 omega_to_rate(const Vec3& theta);
// d(rate_to_omega(theta) * theta_dot)/dtheta, 3x3
Mat3 omega_theta_jacobian(const Vec3& theta, const Vec3& theta_dot);

// Unit-quaternion helpers. Layout everywhere: (w, x, y, z).
Quat quat_exp(const Vec3& rotvec);    // world-frame increment
Vec3 quat_log(const Quat& q);         // inverse of quat_exp
Vec3 quat_boxminus(const Quat& a, const Quat& b);  // log(a * b^-1), world frame

}  // namespace quad
