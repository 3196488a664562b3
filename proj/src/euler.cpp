#include "quad/euler.hpp"

#include <cmath>

namespace quad {

Mat3 euler_zyx_to_rot(const Vec3& theta) {
  return (Eigen::AngleAxisd(theta.z(), Vec3::UnitZ()) *
          Eigen::AngleAxisd(theta.y(), Vec3::UnitY()) *
          Eigen::AngleAxisd(theta.x(), Vec3::UnitX()))
      .toRotationMatrix();
}

Vec3 rot_to_euler_zyx(const Mat3& R) {
  // pitch = asin(-R(2,0)); gimbal-safe branch collapses roll into yaw
  Vec3 theta;
  const double sy = -R(2, 0);
  if (std::abs(sy) > 1.0 - 1e-12) {
    theta.y() = std::copysign(M_PI / 2.0, sy);
    theta.x() = 0.0;
    theta.z() = std::atan2(-R(0, 1), R(1, 1));
  } else {
    theta.y() = std::asin(sy);
    theta.x() = std::atan2(R(2, 1), R(2, 2));
    theta.z() = std::atan2(R(1, 0), R(0, 0));
  }
  return theta;
}

Quat quat_from_euler_zyx(const Vec3& theta) {
  return Quat(euler_zyx_to_rot(theta));
}

Vec3 euler_zyx_from_quat(const Quat& q) {
  return rot_to_euler_zyx(q.toRotationMatrix());
}

Mat3 rate_to_omega(const Vec3& theta) {
  const double cy = std::cos(theta.y()), sy = std::sin(theta.y());
  const double cz = std::cos(theta.z()), sz = std::sin(theta.z());
  Mat3 E;
  E << cy * cz, -sz, 0.0,
       cy * sz,  cz, 0.0,
       -sy,     0.0, 1.0;
  return E;
}

Mat3 omega_to_rate(const Vec3& theta) {
  if (std::abs(theta.y()) >= kEulerPitchGuard) {
    throw EulerSingularity("pitch too close to +/- pi/2 for ZYX rate map");
  }
  const double cy = std::cos(theta.y()), sy = std::sin(theta.y());
  const double cz = std::cos(theta.z()), sz = std::sin(theta.z());
  Mat3 W;
  W << cz / cy,       sz / cy,      0.0,
       -sz,           cz,           0.0,
       cz * sy / cy,  sz * sy / cy, 1.0;
  return W;
}

Mat3 omega_theta_jacobian(const Vec3& theta, const Vec3& theta_dot) {
  const double cy = std::cos(theta.y()), sy = std::sin(theta.y());
  const double cz = std::cos(theta.z()), sz = std::sin(theta.z());
  Mat3 J = Mat3::Zero();
  // omega = E(theta) theta_dot depends on pitch and yaw only
  J.col(1) = theta_dot.x() * Vec3(-sy * cz, -sy * sz, -cy);
  J.col(2) = theta_dot.x() * Vec3(-cy * sz, cy * cz, 0.0) +
             theta_dot.y() * Vec3(-cz, -sz, 0.0);
  return J;
}

Quat quat_exp(const Vec3& rotvec) {
  const double angle = rotvec.norm();
  if (angle < 1e-12) {
    Quat q(1.0, 0.5 * rotvec.x(), 0.5 * rotvec.y(), 0.5 * rotvec.z());
    q.normalize();
    return q;
  }
  return Quat(Eigen::AngleAxisd(angle, rotvec / angle));
}

Vec3 quat_log(const Quat& q_in) {
  Quat q = q_in.normalized();
  if (q.w() < 0.0) q.coeffs() *= -1.0;
  const Vec3 im(q.x(), q.y(), q.z());
  const double im_norm = im.norm();
  if (im_norm < 1e-12) return 2.0 * im;
  const double angle = 2.0 * std::atan2(im_norm, q.w());
  return angle * im / im_norm;
}

Vec3 quat_boxminus(const Quat& a, const Quat& b) {
  return quat_log(a * b.conjugate());
}

}  // namespace quad
