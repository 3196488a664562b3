#include "quad/centroidal.hpp"

#include <Eigen/Eigenvalues>
#include <chrono>
#include <cmath>

#include "quad/euler.hpp"

namespace quad {

Mat3 ellipsoid_inertia(const Vec3& e, const Vec3& gamma, double mass) {
  if (e.minCoeff() <= 0.0) throw CentroidalError("ellipsoid semi-axes must be positive");
  const Mat3 R = euler_zyx_to_rot(gamma);
  Vec3 d;
  d << e.y() * e.y() + e.z() * e.z(), e.x() * e.x() + e.z() * e.z(),
      e.x() * e.x() + e.y() * e.y();
  return R * (0.2 * mass * d).asDiagonal() * R.transpose();
}

EllipsoidFit fit_ellipsoid_density(const Mat3& inertia, double mass) {
  Eigen::SelfAdjointEigenSolver<Mat3> es(inertia);
  const Vec3 lam = es.eigenvalues();
  if (lam.minCoeff() <= 0.0) throw CentroidalError("non-physical inertia: not SPD");
  Mat3 V = es.eigenvectors();
  if (V.determinant() < 0.0) V.col(0) *= -1.0;
  EllipsoidFit fit;
  for (int k = 0; k < 3; ++k) {
    const double sum_others = lam[(k + 1) % 3] + lam[(k + 2) % 3];
    const double ek2 = 2.5 / mass * (sum_others - lam[k]);
    if (ek2 <= 0.0) {
      throw CentroidalError("non-physical inertia: triangle inequality violated");
    }
    fit.e[k] = std::sqrt(ek2);
  }
  fit.gamma = rot_to_euler_zyx(V);
  fit.rho = mass / (4.0 / 3.0 * M_PI * fit.e.prod());
  return fit;
}

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kPyramidShrink = 0.70710678118654752;  // inscribed 4-face pyramid

// dI/de_k and dI/dgamma_k of the ellipsoid inertia
void ellipsoid_inertia_derivs(const Vec3& e, const Vec3& gamma, double mass,
                              std::array<Mat3, 3>& dI_de,
                              std::array<Mat3, 3>& dI_dgamma) {
  const Mat3 R = euler_zyx_to_rot(gamma);
  Vec3 d;
  d << e.y() * e.y() + e.z() * e.z(), e.x() * e.x() + e.z() * e.z(),
      e.x() * e.x() + e.y() * e.y();
  const Mat3 D = (0.2 * mass * d).asDiagonal();
  for (int k = 0; k < 3; ++k) {
    Vec3 dd = Vec3::Zero();
    for (int j = 0; j < 3; ++j) {
      if (j != k) dd[j] = 2.0 * e[k];
    }
    dI_de[k] = R * (0.2 * mass * dd).asDiagonal() * R.transpose();
  }
  // dR/dgamma_k = R * skew(b_k)
  const Mat3 Rx = Eigen::AngleAxisd(gamma.x(), Vec3::UnitX()).toRotationMatrix();
  const Mat3 Ry = Eigen::AngleAxisd(gamma.y(), Vec3::UnitY()).toRotationMatrix();
  std::array<Vec3, 3> b = {Vec3::UnitX(), Rx.transpose() * Vec3::UnitY(),
                           Rx.transpose() * Ry.transpose() * Vec3::UnitZ()};
  for (int k = 0; k < 3; ++k) {
    const Mat3 S = skew(b[k]);
    dI_dgamma[k] = R * (S * D - D * S) * R.transpose();
  }
}

struct Block {
  enum Kind {
    kTorque,
    kMomentum,
    kEllipsoidMass,
    kIntR,
    kIntRd,
    kIntTheta,
    kIntL,
    kUnilateral,
    kPyramid,
    kNoSlip,
    kTerrain,
    kRom,
    kPin
  };
  Kind kind;
  int row = 0;
  int n = 0;
  int knot = 0;
  int foot = -1;
  int field = 0;   // pin: variable field offset
  double scale = 1.0;
  Vec3 target = Vec3::Zero();  // pin target
};

struct TranscriptionData {
  CentroidalProblem prob;
  std::optional<WbdReferenceBundle> ref;
  CenLayout layout;
  std::vector<Block> blocks;
  int n_rows = 0;
  VecX c_lower, c_upper;
  // per-knot quantities
  std::vector<double> rho;       // ellipsoid mode
  std::vector<Mat3> inertia_ref; // crb mode: inertia used in the momentum row
  // row scales
  double s_force = 1.0, s_angmom = 1.0, s_torque = 1.0;

  const WbdReferenceBundle* bundle() const { return ref ? &*ref : nullptr; }

  Vec3 seg(const VecX& x, int knot, int field) const {
    return x.segment<3>(layout.var(knot, field));
  }

  void friction_basis(const VecX& x, int knot, int foot, Vec3& n, Vec3& t1,
                      Vec3& t2, double& mu) const {
    const Vec3 p = seg(x, knot, CenLayout::kP + 3 * foot);
    n = prob.terrain.normal(p.x(), p.y());
    mu = prob.terrain.friction(p.x(), p.y());
    const Vec3 a = std::abs(n.z()) < 0.9 ? Vec3::UnitZ() : Vec3::UnitX();
    t1 = n.cross(a).normalized();
    t2 = n.cross(t1);
  }

  void eval_constraints(const VecX& x, VecX& c) const;
  void eval_jacobian(const VecX& x, SparseTriplets& trips) const;
  double cost(const VecX& x) const;
  VecX cost_gradient(const VecX& x) const;
};

void TranscriptionData::eval_constraints(const VecX& x, VecX& c) const {
  const double dt = prob.schedule.dt;
  const double m = prob.mass;
  for (const Block& b : blocks) {
    switch (b.kind) {
      case Block::kTorque: {
        const Vec3 r = seg(x, b.knot, CenLayout::kR);
        Vec3 val = seg(x, b.knot, CenLayout::kLd);
        for (int j = 0; j < 4; ++j) {
          const Vec3 p = seg(x, b.knot, CenLayout::kP + 3 * j);
          const Vec3 f = seg(x, b.knot, CenLayout::kF + 3 * j);
          val -= (p - r).cross(f);
        }
        c.segment<3>(b.row) = b.scale * val;
        break;
      }
      case Block::kMomentum: {
        const Vec3 theta = seg(x, b.knot, CenLayout::kTheta);
        const Vec3 thetad = seg(x, b.knot, CenLayout::kThetad);
        const Vec3 omega = rate_to_omega(theta) * thetad;
        Mat3 I;
        if (prob.use_ellipsoid) {
          I = ellipsoid_inertia(seg(x, b.knot, CenLayout::kE),
                                seg(x, b.knot, CenLayout::kGamma), m);
        } else {
          I = inertia_ref[b.knot];
        }
        c.segment<3>(b.row) =
            b.scale * (seg(x, b.knot, CenLayout::kL) - I * omega);
        break;
      }
      case Block::kEllipsoidMass: {
        const Vec3 e = seg(x, b.knot, CenLayout::kE);
        c[b.row] = b.scale * (4.0 / 3.0 * M_PI * e.prod() * rho[b.knot] - m);
        break;
      }
      case Block::kIntR: {
        c.segment<3>(b.row) =
            b.scale * (seg(x, b.knot + 1, CenLayout::kR) - seg(x, b.knot, CenLayout::kR) -
                       0.5 * dt *
                           (seg(x, b.knot + 1, CenLayout::kRd) +
                            seg(x, b.knot, CenLayout::kRd)));
        break;
      }
      case Block::kIntRd: {
        Vec3 acc_sum = 2.0 * prob.gravity;
        for (int j = 0; j < 4; ++j) {
          acc_sum += (seg(x, b.knot, CenLayout::kF + 3 * j) +
                      seg(x, b.knot + 1, CenLayout::kF + 3 * j)) /
                     m;
        }
        c.segment<3>(b.row) =
            b.scale * (seg(x, b.knot + 1, CenLayout::kRd) -
                       seg(x, b.knot, CenLayout::kRd) - 0.5 * dt * acc_sum);
        break;
      }
      case Block::kIntTheta: {
        c.segment<3>(b.row) =
            b.scale *
            (seg(x, b.knot + 1, CenLayout::kTheta) - seg(x, b.knot, CenLayout::kTheta) -
             0.5 * dt *
                 (seg(x, b.knot + 1, CenLayout::kThetad) +
                  seg(x, b.knot, CenLayout::kThetad)));
        break;
      }
      case Block::kIntL: {
        c.segment<3>(b.row) =
            b.scale * (seg(x, b.knot + 1, CenLayout::kL) - seg(x, b.knot, CenLayout::kL) -
                       0.5 * dt *
                           (seg(x, b.knot + 1, CenLayout::kLd) +
                            seg(x, b.knot, CenLayout::kLd)));
        break;
      }
      case Block::kUnilateral: {
        Vec3 n, t1, t2;
        double mu;
        friction_basis(x, b.knot, b.foot, n, t1, t2, mu);
        const Vec3 f = seg(x, b.knot, CenLayout::kF + 3 * b.foot);
        c[b.row] = b.scale * (-f.dot(n));
        break;
      }
      case Block::kPyramid: {
        Vec3 n, t1, t2;
        double mu;
        friction_basis(x, b.knot, b.foot, n, t1, t2, mu);
        const Vec3 f = seg(x, b.knot, CenLayout::kF + 3 * b.foot);
        const double fn = f.dot(n);
        const double c_mu = kPyramidShrink * mu;
        c[b.row + 0] = b.scale * (f.dot(t1) - c_mu * fn);
        c[b.row + 1] = b.scale * (-f.dot(t1) - c_mu * fn);
        c[b.row + 2] = b.scale * (f.dot(t2) - c_mu * fn);
        c[b.row + 3] = b.scale * (-f.dot(t2) - c_mu * fn);
        break;
      }
      case Block::kNoSlip: {
        const Vec3 p0 = seg(x, b.knot, CenLayout::kP + 3 * b.foot);
        const Vec3 p1 = seg(x, b.knot + 1, CenLayout::kP + 3 * b.foot);
        c[b.row + 0] = b.scale * (p1.x() - p0.x());
        c[b.row + 1] = b.scale * (p1.y() - p0.y());
        break;
      }
      case Block::kTerrain: {
        const Vec3 p = seg(x, b.knot, CenLayout::kP + 3 * b.foot);
        c[b.row] = b.scale * (p.z() - prob.terrain.height(p.x(), p.y()));
        break;
      }
      case Block::kRom: {
        const Vec3 p = seg(x, b.knot, CenLayout::kP + 3 * b.foot);
        const Vec3 r = seg(x, b.knot, CenLayout::kR);
        const double yaw = x[layout.var(b.knot, CenLayout::kTheta, 2)];
        const Mat3 Rz = Eigen::AngleAxisd(yaw, Vec3::UnitZ()).toRotationMatrix();
        c.segment<3>(b.row) =
            b.scale * (Rz.transpose() * (p - r) - prob.rom[b.foot].offset);
        break;
      }
      case Block::kPin: {
        c.segment<3>(b.row) =
            b.scale * (x.segment<3>(layout.var(b.knot, b.field)) - b.target);
        break;
      }
    }
  }
}

void TranscriptionData::eval_jacobian(const VecX& x, SparseTriplets& trips) const {
  const double dt = prob.schedule.dt;
  const double m = prob.mass;
  auto add3 = [&](int row, int col, const Mat3& J, double scale) {
    for (int a = 0; a < 3; ++a)
      for (int bb = 0; bb < 3; ++bb) {
        const double v = scale * J(a, bb);
        if (v != 0.0) trips.emplace_back(row + a, col + bb, v);
      }
  };
  auto add_diag3 = [&](int row, int col, double v) {
    for (int a = 0; a < 3; ++a) trips.emplace_back(row + a, col + a, v);
  };
  for (const Block& b : blocks) {
    switch (b.kind) {
      case Block::kTorque: {
        const Vec3 r = seg(x, b.knot, CenLayout::kR);
        add_diag3(b.row, layout.var(b.knot, CenLayout::kLd), b.scale);
        Mat3 sum_fhat = Mat3::Zero();
        for (int j = 0; j < 4; ++j) {
          const Vec3 p = seg(x, b.knot, CenLayout::kP + 3 * j);
          const Vec3 f = seg(x, b.knot, CenLayout::kF + 3 * j);
          add3(b.row, layout.var(b.knot, CenLayout::kP + 3 * j), skew(f), b.scale);
          add3(b.row, layout.var(b.knot, CenLayout::kF + 3 * j), -skew(p - r),
               b.scale);
          sum_fhat += skew(f);
        }
        add3(b.row, layout.var(b.knot, CenLayout::kR), -sum_fhat, b.scale);
        break;
      }
      case Block::kMomentum: {
        const Vec3 theta = seg(x, b.knot, CenLayout::kTheta);
        const Vec3 thetad = seg(x, b.knot, CenLayout::kThetad);
        const Mat3 E = rate_to_omega(theta);
        const Vec3 omega = E * thetad;
        Mat3 I;
        if (prob.use_ellipsoid) {
          const Vec3 e = seg(x, b.knot, CenLayout::kE);
          const Vec3 gamma = seg(x, b.knot, CenLayout::kGamma);
          I = ellipsoid_inertia(e, gamma, m);
          std::array<Mat3, 3> dI_de, dI_dg;
          ellipsoid_inertia_derivs(e, gamma, m, dI_de, dI_dg);
          for (int k = 0; k < 3; ++k) {
            const Vec3 col_e = -(dI_de[k] * omega);
            const Vec3 col_g = -(dI_dg[k] * omega);
            for (int a = 0; a < 3; ++a) {
              trips.emplace_back(b.row + a, layout.var(b.knot, CenLayout::kE, k),
                                 b.scale * col_e[a]);
              trips.emplace_back(b.row + a,
                                 layout.var(b.knot, CenLayout::kGamma, k),
                                 b.scale * col_g[a]);
            }
          }
        } else {
          I = inertia_ref[b.knot];
        }
        add_diag3(b.row, layout.var(b.knot, CenLayout::kL), b.scale);
        add3(b.row, layout.var(b.knot, CenLayout::kTheta),
             -(I * omega_theta_jacobian(theta, thetad)), b.scale);
        add3(b.row, layout.var(b.knot, CenLayout::kThetad), -(I * E), b.scale);
        break;
      }
      case Block::kEllipsoidMass: {
        const Vec3 e = seg(x, b.knot, CenLayout::kE);
        const double k = b.scale * 4.0 / 3.0 * M_PI * rho[b.knot];
        trips.emplace_back(b.row, layout.var(b.knot, CenLayout::kE, 0),
                           k * e.y() * e.z());
        trips.emplace_back(b.row, layout.var(b.knot, CenLayout::kE, 1),
                           k * e.x() * e.z());
        trips.emplace_back(b.row, layout.var(b.knot, CenLayout::kE, 2),
                           k * e.x() * e.y());
        break;
      }
      case Block::kIntR: {
        add_diag3(b.row, layout.var(b.knot + 1, CenLayout::kR), b.scale);
        add_diag3(b.row, layout.var(b.knot, CenLayout::kR), -b.scale);
        add_diag3(b.row, layout.var(b.knot + 1, CenLayout::kRd), -0.5 * dt * b.scale);
        add_diag3(b.row, layout.var(b.knot, CenLayout::kRd), -0.5 * dt * b.scale);
        break;
      }
      case Block::kIntRd: {
        add_diag3(b.row, layout.var(b.knot + 1, CenLayout::kRd), b.scale);
        add_diag3(b.row, layout.var(b.knot, CenLayout::kRd), -b.scale);
        for (int j = 0; j < 4; ++j) {
          add_diag3(b.row, layout.var(b.knot + 1, CenLayout::kF + 3 * j),
                    -0.5 * dt * b.scale / m);
          add_diag3(b.row, layout.var(b.knot, CenLayout::kF + 3 * j),
                    -0.5 * dt * b.scale / m);
        }
        break;
      }
      case Block::kIntTheta: {
        add_diag3(b.row, layout.var(b.knot + 1, CenLayout::kTheta), b.scale);
        add_diag3(b.row, layout.var(b.knot, CenLayout::kTheta), -b.scale);
        add_diag3(b.row, layout.var(b.knot + 1, CenLayout::kThetad),
                  -0.5 * dt * b.scale);
        add_diag3(b.row, layout.var(b.knot, CenLayout::kThetad), -0.5 * dt * b.scale);
        break;
      }
      case Block::kIntL: {
        add_diag3(b.row, layout.var(b.knot + 1, CenLayout::kL), b.scale);
        add_diag3(b.row, layout.var(b.knot, CenLayout::kL), -b.scale);
        add_diag3(b.row, layout.var(b.knot + 1, CenLayout::kLd), -0.5 * dt * b.scale);
        add_diag3(b.row, layout.var(b.knot, CenLayout::kLd), -0.5 * dt * b.scale);
        break;
      }
      case Block::kUnilateral: {
        Vec3 n, t1, t2;
        double mu;
        friction_basis(x, b.knot, b.foot, n, t1, t2, mu);
        for (int a = 0; a < 3; ++a) {
          trips.emplace_back(b.row, layout.var(b.knot, CenLayout::kF + 3 * b.foot, a),
                             -b.scale * n[a]);
        }
        break;
      }
      case Block::kPyramid: {
        Vec3 n, t1, t2;
        double mu;
        friction_basis(x, b.knot, b.foot, n, t1, t2, mu);
        const double c_mu = kPyramidShrink * mu;
        const Vec3 rows[4] = {t1 - c_mu * n, -t1 - c_mu * n, t2 - c_mu * n,
                              -t2 - c_mu * n};
        for (int rr = 0; rr < 4; ++rr) {
          for (int a = 0; a < 3; ++a) {
            trips.emplace_back(b.row + rr,
                               layout.var(b.knot, CenLayout::kF + 3 * b.foot, a),
                               b.scale * rows[rr][a]);
          }
        }
        break;
      }
      case Block::kNoSlip: {
        for (int a = 0; a < 2; ++a) {
          trips.emplace_back(b.row + a,
                             layout.var(b.knot + 1, CenLayout::kP + 3 * b.foot, a),
                             b.scale);
          trips.emplace_back(b.row + a,
                             layout.var(b.knot, CenLayout::kP + 3 * b.foot, a),
                             -b.scale);
        }
        break;
      }
      case Block::kTerrain: {
        const Vec3 p = seg(x, b.knot, CenLayout::kP + 3 * b.foot);
        const Eigen::Vector2d grad = prob.terrain.height_gradient(p.x(), p.y());
        trips.emplace_back(b.row, layout.var(b.knot, CenLayout::kP + 3 * b.foot, 2),
                           b.scale);
        trips.emplace_back(b.row, layout.var(b.knot, CenLayout::kP + 3 * b.foot, 0),
                           -b.scale * grad.x());
        trips.emplace_back(b.row, layout.var(b.knot, CenLayout::kP + 3 * b.foot, 1),
                           -b.scale * grad.y());
        break;
      }
      case Block::kRom: {
        const Vec3 p = seg(x, b.knot, CenLayout::kP + 3 * b.foot);
        const Vec3 r = seg(x, b.knot, CenLayout::kR);
        const double yaw = x[layout.var(b.knot, CenLayout::kTheta, 2)];
        const Mat3 Rzt =
            Eigen::AngleAxisd(yaw, Vec3::UnitZ()).toRotationMatrix().transpose();
        add3(b.row, layout.var(b.knot, CenLayout::kP + 3 * b.foot), Rzt, b.scale);
        add3(b.row, layout.var(b.knot, CenLayout::kR), -Rzt, b.scale);
        const Vec3 dyaw = -skew(Vec3::UnitZ()) * (Rzt * (p - r));
        for (int a = 0; a < 3; ++a) {
          trips.emplace_back(b.row + a, layout.var(b.knot, CenLayout::kTheta, 2),
                             b.scale * dyaw[a]);
        }
        break;
      }
      case Block::kPin: {
        add_diag3(b.row, layout.var(b.knot, b.field), b.scale);
        break;
      }
    }
  }
}

double TranscriptionData::cost(const VecX& x) const {
  const CentroidalWeights& w = prob.weights;
  const double dt = prob.schedule.dt;
  const int N = layout.n_knots;
  double J = 0.0;
  for (int i = 0; i < N; ++i) {
    J += w.theta_rate * seg(x, i, CenLayout::kThetad).squaredNorm();
    J += w.ldot_reg * seg(x, i, CenLayout::kLd).squaredNorm();
    for (int j = 0; j < 4; ++j) {
      J += w.force_reg * seg(x, i, CenLayout::kF + 3 * j).squaredNorm();
      if (i + 1 < N) {
        J += w.foot_velocity * ((seg(x, i + 1, CenLayout::kP + 3 * j) -
                                 seg(x, i, CenLayout::kP + 3 * j)) /
                                dt)
                                  .squaredNorm();
        J += w.force_rate * (seg(x, i + 1, CenLayout::kF + 3 * j) -
                             seg(x, i, CenLayout::kF + 3 * j))
                                .squaredNorm();
      }
    }
    if (bundle()) {
      const WbdReferenceBundle& ref = *bundle();
      J += w.track_com * (seg(x, i, CenLayout::kR) - ref.r[i]).squaredNorm();
      J += w.track_lin_momentum *
           (prob.mass * seg(x, i, CenLayout::kRd) - ref.k[i]).squaredNorm();
      J += w.track_ang_momentum *
           (seg(x, i, CenLayout::kL) - ref.l[i]).squaredNorm();
      for (int j = 0; j < 4; ++j) {
        J += w.track_foot *
             (seg(x, i, CenLayout::kP + 3 * j) - ref.p[i][j]).squaredNorm();
      }
      if (prob.use_ellipsoid && w.track_inertia > 0.0) {
        const Mat3 dI = ellipsoid_inertia(seg(x, i, CenLayout::kE),
                                          seg(x, i, CenLayout::kGamma), prob.mass) -
                        ref.inertia[i];
        J += w.track_inertia * dI.squaredNorm();
      }
    }
  }
  return J;
}

VecX TranscriptionData::cost_gradient(const VecX& x) const {
  const CentroidalWeights& w = prob.weights;
  const double dt = prob.schedule.dt;
  const int N = layout.n_knots;
  VecX g = VecX::Zero(x.size());
  auto acc = [&](int knot, int field, const Vec3& v) {
    g.segment<3>(layout.var(knot, field)) += v;
  };
  for (int i = 0; i < N; ++i) {
    acc(i, CenLayout::kThetad, 2.0 * w.theta_rate * seg(x, i, CenLayout::kThetad));
    acc(i, CenLayout::kLd, 2.0 * w.ldot_reg * seg(x, i, CenLayout::kLd));
    for (int j = 0; j < 4; ++j) {
      acc(i, CenLayout::kF + 3 * j,
          2.0 * w.force_reg * seg(x, i, CenLayout::kF + 3 * j));
      if (i + 1 < N) {
        const Vec3 dv = (seg(x, i + 1, CenLayout::kP + 3 * j) -
                         seg(x, i, CenLayout::kP + 3 * j)) /
                        (dt * dt);
        acc(i + 1, CenLayout::kP + 3 * j, 2.0 * w.foot_velocity * dv);
        acc(i, CenLayout::kP + 3 * j, -2.0 * w.foot_velocity * dv);
        const Vec3 df = seg(x, i + 1, CenLayout::kF + 3 * j) -
                        seg(x, i, CenLayout::kF + 3 * j);
        acc(i + 1, CenLayout::kF + 3 * j, 2.0 * w.force_rate * df);
        acc(i, CenLayout::kF + 3 * j, -2.0 * w.force_rate * df);
      }
    }
    if (bundle()) {
      const WbdReferenceBundle& ref = *bundle();
      acc(i, CenLayout::kR,
          2.0 * w.track_com * (seg(x, i, CenLayout::kR) - ref.r[i]));
      acc(i, CenLayout::kRd,
          2.0 * w.track_lin_momentum * prob.mass *
              (prob.mass * seg(x, i, CenLayout::kRd) - ref.k[i]));
      acc(i, CenLayout::kL,
          2.0 * w.track_ang_momentum * (seg(x, i, CenLayout::kL) - ref.l[i]));
      for (int j = 0; j < 4; ++j) {
        acc(i, CenLayout::kP + 3 * j,
            2.0 * w.track_foot *
                (seg(x, i, CenLayout::kP + 3 * j) - ref.p[i][j]));
      }
      if (prob.use_ellipsoid && w.track_inertia > 0.0) {
        const Vec3 e = seg(x, i, CenLayout::kE);
        const Vec3 gamma = seg(x, i, CenLayout::kGamma);
        const Mat3 dI = ellipsoid_inertia(e, gamma, prob.mass) - ref.inertia[i];
        std::array<Mat3, 3> dI_de, dI_dg;
        ellipsoid_inertia_derivs(e, gamma, prob.mass, dI_de, dI_dg);
        Vec3 ge, gg;
        for (int k = 0; k < 3; ++k) {
          ge[k] = 2.0 * w.track_inertia * dI.cwiseProduct(dI_de[k]).sum();
          gg[k] = 2.0 * w.track_inertia * dI.cwiseProduct(dI_dg[k]).sum();
        }
        acc(i, CenLayout::kE, ge);
        acc(i, CenLayout::kGamma, gg);
      }
    }
  }
  return g;
}

VecX build_initial_guess(const TranscriptionData& d) {
  const CentroidalProblem& prob = d.prob;
  const CenLayout& L = d.layout;
  const int N = L.n_knots;
  const double dt = prob.schedule.dt;
  VecX x = VecX::Zero(L.total());

  const Vec3 r0 = prob.boundary.r0;
  const Vec3 rf = prob.boundary.r_final.value_or(r0);
  const Vec3 th0 = prob.boundary.theta0;
  const Vec3 thf = prob.boundary.theta_final.value_or(th0);

  for (int i = 0; i < N; ++i) {
    const double a = N > 1 ? static_cast<double>(i) / (N - 1) : 0.0;
    // smoothstep keeps the endpoint rates consistent with the boundary pins
    const double blend = a * a * (3.0 - 2.0 * a);
    const double blend_rate =
        N > 1 ? 6.0 * a * (1.0 - a) / ((N - 1) * dt) : 0.0;
    const Vec3 r = (1 - blend) * r0 + blend * rf;
    const Vec3 th = (1 - blend) * th0 + blend * thf;
    const Vec3 thd = (thf - th0) * blend_rate;
    x.segment<3>(L.var(i, CenLayout::kR)) = r;
    x.segment<3>(L.var(i, CenLayout::kRd)) = (rf - r0) * blend_rate;
    x.segment<3>(L.var(i, CenLayout::kTheta)) = th;
    x.segment<3>(L.var(i, CenLayout::kThetad)) = thd;
    const Mat3 I = prob.use_ellipsoid
                       ? ellipsoid_inertia(fit_ellipsoid_density(
                                               d.inertia_ref[i], prob.mass)
                                               .e,
                                           th, prob.mass)
                       : d.inertia_ref[i];
    x.segment<3>(L.var(i, CenLayout::kL)) = I * (rate_to_omega(th) * thd);

    const auto stance = prob.schedule.stance_feet(i);
    const double share =
        stance.empty() ? 0.0 : prob.mass * prob.gravity.norm() / stance.size();
    const Mat3 Rz =
        Eigen::AngleAxisd(th.z() - th0.z(), Vec3::UnitZ()).toRotationMatrix();
    for (int j = 0; j < 4; ++j) {
      Vec3 p = prob.boundary.feet0.size() == 4
                   ? (r + Rz * (prob.boundary.feet0[j] - r0)).eval()
                   : r + Vec3(0, 0, -0.25);
      if (prob.schedule.in_stance(j, i) && prob.terrain.defined()) {
        p.z() = prob.terrain.height(p.x(), p.y());
      }
      x.segment<3>(L.var(i, CenLayout::kP + 3 * j)) = p;
      if (prob.schedule.in_stance(j, i)) {
        x[L.var(i, CenLayout::kF + 3 * j, 2)] = share;
      }
    }
    if (prob.use_ellipsoid) {
      const EllipsoidFit fit = fit_ellipsoid_density(d.inertia_ref[i], prob.mass);
      x.segment<3>(L.var(i, CenLayout::kE)) = fit.e;
      x.segment<3>(L.var(i, CenLayout::kGamma)) = fit.gamma + (th - th0);
    }
  }
  // ld from finite differences of l
  for (int i = 0; i < N; ++i) {
    const int i0 = std::max(0, i - 1), i1 = std::min(N - 1, i + 1);
    const Vec3 dl = (x.segment<3>(L.var(i1, CenLayout::kL)) -
                     x.segment<3>(L.var(i0, CenLayout::kL)));
    x.segment<3>(L.var(i, CenLayout::kLd)) =
        (i1 > i0) ? (dl / ((i1 - i0) * dt)).eval() : Vec3::Zero();
  }
  return x;
}

}  // namespace

CentroidalTranscription transcribe(const CentroidalProblem& problem,
                                   const WbdReferenceBundle* wbd_ref) {
  problem.schedule.validate();
  if (problem.schedule.n_feet() != 4) {
    throw CentroidalError("schedule must cover 4 feet");
  }
  if (problem.mass <= 0.0) throw CentroidalError("mass must be positive");
  if (wbd_ref && wbd_ref->size() != problem.schedule.n_knots) {
    throw CentroidalError("whole-body reference length mismatch");
  }

  auto d = std::make_shared<TranscriptionData>();
  d->prob = problem;
  if (wbd_ref) d->ref = *wbd_ref;
  d->layout.stride = problem.use_ellipsoid ? 48 : 42;
  d->layout.n_knots = problem.schedule.n_knots;
  const int N = d->layout.n_knots;
  const double m = problem.mass;
  const double g_ref = kDefaultGravity;

  d->s_force = 1.0 / (m * g_ref);
  d->s_torque = 1.0 / (m * g_ref * 0.25);
  d->s_angmom = 1.0 / (m * 0.25);

  // per-knot inertia and density references
  d->inertia_ref.resize(N);
  d->rho.assign(N, problem.fallback_density);
  for (int i = 0; i < N; ++i) {
    d->inertia_ref[i] = wbd_ref ? wbd_ref->inertia[i] : problem.fallback_inertia;
    if (problem.use_ellipsoid && wbd_ref) {
      d->rho[i] = fit_ellipsoid_density(wbd_ref->inertia[i], m).rho;
    }
  }

  // stance knots require a terrain
  for (int i = 0; i < N; ++i) {
    if (!problem.schedule.stance_feet(i).empty() && !problem.terrain.defined()) {
      throw CentroidalError("stance knot " + std::to_string(i) +
                            " has no terrain under it");
    }
  }

  // assemble constraint blocks
  int row = 0;
  auto push = [&](Block b, double lo, double hi) {
    b.row = row;
    row += b.n;
    d->blocks.push_back(b);
    for (int k = 0; k < b.n; ++k) {
      d->c_lower.conservativeResize(row);
      d->c_upper.conservativeResize(row);
      d->c_lower[row - b.n + k] = lo;
      d->c_upper[row - b.n + k] = hi;
    }
  };

  const double sdt = 1.0 / problem.schedule.dt;
  for (int i = 0; i < N; ++i) {
    push({Block::kTorque, 0, 3, i, -1, 0, d->s_torque}, 0.0, 0.0);
    push({Block::kMomentum, 0, 3, i, -1, 0, d->s_angmom}, 0.0, 0.0);
    if (problem.use_ellipsoid) {
      push({Block::kEllipsoidMass, 0, 1, i, -1, 0, 1.0 / m}, 0.0, 0.0);
    }
    if (i + 1 < N) {
      push({Block::kIntR, 0, 3, i, -1, 0, sdt}, 0.0, 0.0);
      push({Block::kIntRd, 0, 3, i, -1, 0, sdt / g_ref}, 0.0, 0.0);
      push({Block::kIntTheta, 0, 3, i, -1, 0, sdt}, 0.0, 0.0);
      push({Block::kIntL, 0, 3, i, -1, 0, sdt * d->s_angmom}, 0.0, 0.0);
    }
    for (int j = 0; j < 4; ++j) {
      if (problem.schedule.in_stance(j, i)) {
        push({Block::kUnilateral, 0, 1, i, j, 0, d->s_force}, -kInf, 0.0);
        push({Block::kPyramid, 0, 4, i, j, 0, d->s_force}, -kInf, 0.0);
        if (problem.schedule.stance_pair(j, i)) {
          push({Block::kNoSlip, 0, 2, i, j, 0, sdt}, 0.0, 0.0);
        }
        push({Block::kTerrain, 0, 1, i, j, 0, 1.0}, 0.0, 0.0);
      }
      if (static_cast<int>(problem.rom.size()) == 4) {
        Block b{Block::kRom, 0, 3, i, j, 0, 1.0};
        b.row = row;
        row += 3;
        d->blocks.push_back(b);
        d->c_lower.conservativeResize(row);
        d->c_upper.conservativeResize(row);
        d->c_lower.tail(3) = -problem.rom[j].half_extents;
        d->c_upper.tail(3) = problem.rom[j].half_extents;
      }
    }
  }
  // boundary pins
  auto pin = [&](int knot, int field, const Vec3& target, double scale) {
    Block b{Block::kPin, 0, 3, knot, -1, field, scale};
    b.target = target;
    push(b, 0.0, 0.0);
  };
  pin(0, CenLayout::kR, problem.boundary.r0, 1.0);
  pin(0, CenLayout::kRd, problem.boundary.rd0, 1.0);
  pin(0, CenLayout::kTheta, problem.boundary.theta0, 1.0);
  pin(0, CenLayout::kThetad, problem.boundary.thetad0, 1.0);
  pin(0, CenLayout::kL, problem.boundary.l0, d->s_angmom);
  if (problem.boundary.feet0.size() == 4) {
    for (int j = 0; j < 4; ++j) {
      if (problem.schedule.in_stance(j, 0)) {
        pin(0, CenLayout::kP + 3 * j, problem.boundary.feet0[j], 1.0);
      }
    }
  }
  if (problem.boundary.r_final) pin(N - 1, CenLayout::kR, *problem.boundary.r_final, 1.0);
  if (problem.boundary.rd_final) pin(N - 1, CenLayout::kRd, *problem.boundary.rd_final, 1.0);
  if (problem.boundary.theta_final) {
    pin(N - 1, CenLayout::kTheta, *problem.boundary.theta_final, 1.0);
  }
  if (problem.boundary.thetad_final) {
    pin(N - 1, CenLayout::kThetad, *problem.boundary.thetad_final, 1.0);
  }
  if (problem.boundary.l_final) {
    pin(N - 1, CenLayout::kL, *problem.boundary.l_final, d->s_angmom);
  }
  if (problem.use_ellipsoid && problem.boundary.gamma0) {
    pin(0, CenLayout::kGamma, *problem.boundary.gamma0, 1.0);
  }
  if (problem.use_ellipsoid && problem.boundary.gamma_final) {
    pin(N - 1, CenLayout::kGamma, *problem.boundary.gamma_final, 1.0);
  }
  for (const CentroidalPin& ip : problem.pins) {
    if (ip.knot < 0 || ip.knot >= N) throw CentroidalError("pin knot out of range");
    if (ip.r) pin(ip.knot, CenLayout::kR, *ip.r, 1.0);
    if (ip.theta) pin(ip.knot, CenLayout::kTheta, *ip.theta, 1.0);
    for (const auto& [foot, pos] : ip.feet) {
      pin(ip.knot, CenLayout::kP + 3 * foot, pos, 1.0);
    }
  }
  d->n_rows = row;

  std::vector<std::string> labels(row);
  {
    static const char* names[] = {"torque",     "momentum", "ellipsoid_mass",
                                  "int_r",      "int_rd",   "int_theta",
                                  "int_l",      "unilateral", "pyramid",
                                  "no_slip",    "terrain",  "rom",
                                  "pin"};
    for (const Block& b : d->blocks) {
      for (int k = 0; k < b.n; ++k) labels[b.row + k] = names[b.kind];
    }
  }

  // variable bounds and scaling
  const int n = d->layout.total();
  VecX lb = VecX::Constant(n, -kInf);
  VecX ub = VecX::Constant(n, kInf);
  VecX scale = VecX::Ones(n);
  for (int i = 0; i < N; ++i) {
    for (int j = 0; j < 4; ++j) {
      for (int a = 0; a < 3; ++a) {
        const int idx = d->layout.var(i, CenLayout::kF + 3 * j, a);
        if (problem.schedule.in_stance(j, i)) {
          lb[idx] = -problem.force_bound;
          ub[idx] = problem.force_bound;
          scale[idx] = m * g_ref;
        } else {
          lb[idx] = 0.0;  // swing feet carry no force
          ub[idx] = 0.0;
        }
      }
    }
    for (int a = 0; a < 3; ++a) {
      scale[d->layout.var(i, CenLayout::kL, a)] = m * 0.25;
      scale[d->layout.var(i, CenLayout::kLd, a)] = m * 0.25 * 4.0;
    }
    if (problem.use_ellipsoid) {
      for (int a = 0; a < 3; ++a) {
        const int idx = d->layout.var(i, CenLayout::kE, a);
        lb[idx] = 0.02;
        ub[idx] = 2.0;
        scale[idx] = 0.1;
      }
    }
  }

  CentroidalTranscription out;
  out.layout = d->layout;
  out.row_labels = std::move(labels);
  out.data = d;
  out.nlp.n = n;
  out.nlp.m = d->n_rows;
  out.nlp.lower = lb;
  out.nlp.upper = ub;
  out.nlp.x_scale = scale;
  out.nlp.c_lower = d->c_lower;
  out.nlp.c_upper = d->c_upper;
  TranscriptionData* raw = d.get();
  out.nlp.objective = [raw](const VecX& x) { return raw->cost(x); };
  out.nlp.gradient = [raw](const VecX& x) { return raw->cost_gradient(x); };
  out.nlp.constraints = [raw](const VecX& x, VecX& c) {
    c.resize(raw->n_rows);
    raw->eval_constraints(x, c);
  };
  out.nlp.jacobian = [raw](const VecX& x, SparseTriplets& t) {
    t.clear();
    raw->eval_jacobian(x, t);
  };
  out.initial_guess = build_initial_guess(*d);
  return out;
}

CentroidalTrajectory unpack_trajectory(const CentroidalProblem& problem,
                                       const CenLayout& layout, const VecX& x,
                                       const WbdReferenceBundle* wbd_ref) {
  CentroidalTrajectory traj;
  traj.dt = problem.schedule.dt;
  traj.knots.resize(layout.n_knots);
  for (int i = 0; i < layout.n_knots; ++i) {
    CentroidalKnot& k = traj.knots[i];
    k.r = x.segment<3>(layout.var(i, CenLayout::kR));
    k.rd = x.segment<3>(layout.var(i, CenLayout::kRd));
    k.theta = x.segment<3>(layout.var(i, CenLayout::kTheta));
    k.thetad = x.segment<3>(layout.var(i, CenLayout::kThetad));
    k.l = x.segment<3>(layout.var(i, CenLayout::kL));
    k.ld = x.segment<3>(layout.var(i, CenLayout::kLd));
    Vec3 f_sum = Vec3::Zero();
    for (int j = 0; j < 4; ++j) {
      k.p[j] = x.segment<3>(layout.var(i, CenLayout::kP + 3 * j));
      k.f[j] = x.segment<3>(layout.var(i, CenLayout::kF + 3 * j));
      f_sum += k.f[j];
    }
    k.rdd = problem.gravity + f_sum / problem.mass;
    if (problem.use_ellipsoid) {
      k.e = x.segment<3>(layout.var(i, CenLayout::kE));
      k.gamma = x.segment<3>(layout.var(i, CenLayout::kGamma));
    } else {
      const Mat3 I = wbd_ref ? wbd_ref->inertia[i] : problem.fallback_inertia;
      const EllipsoidFit fit = fit_ellipsoid_density(I, problem.mass);
      k.e = fit.e;
      k.gamma = fit.gamma;
    }
  }
  return traj;
}

VecX pack_trajectory(const CentroidalProblem& problem, const CenLayout& layout,
                     const CentroidalTrajectory& traj) {
  VecX x = VecX::Zero(layout.total());
  for (int i = 0; i < layout.n_knots && i < traj.size(); ++i) {
    const CentroidalKnot& k = traj.knots[i];
    x.segment<3>(layout.var(i, CenLayout::kR)) = k.r;
    x.segment<3>(layout.var(i, CenLayout::kRd)) = k.rd;
    x.segment<3>(layout.var(i, CenLayout::kTheta)) = k.theta;
    x.segment<3>(layout.var(i, CenLayout::kThetad)) = k.thetad;
    x.segment<3>(layout.var(i, CenLayout::kL)) = k.l;
    x.segment<3>(layout.var(i, CenLayout::kLd)) = k.ld;
    for (int j = 0; j < 4; ++j) {
      x.segment<3>(layout.var(i, CenLayout::kP + 3 * j)) = k.p[j];
      x.segment<3>(layout.var(i, CenLayout::kF + 3 * j)) = k.f[j];
    }
    if (problem.use_ellipsoid) {
      x.segment<3>(layout.var(i, CenLayout::kE)) = k.e;
      x.segment<3>(layout.var(i, CenLayout::kGamma)) = k.gamma;
    }
  }
  return x;
}

CentroidalTrajectory solve_centroidal(const CentroidalProblem& problem,
                                      const WbdReferenceBundle* wbd_ref,
                                      const CentroidalTrajectory* warm,
                                      CentroidalSolveInfo* info,
                                      const CentroidalSolverOptions& opts) {
  const auto t0 = std::chrono::steady_clock::now();
  CentroidalTranscription tr = transcribe(problem, wbd_ref);
  VecX x0 = tr.initial_guess;
  if (warm && warm->size() == tr.layout.n_knots) {
    x0 = pack_trajectory(problem, tr.layout, *warm);
  }
  NlpSettings settings;
  settings.tol_feas = opts.tol_feas;
  settings.tol_opt = 1e-4;
  settings.max_outer = opts.max_outer;
  settings.max_inner = opts.max_inner;
  settings.mu0 = 100.0;
  settings.mu_max = 1e7;
  settings.mu_growth = 4.0;
  settings.viol_decrease = 0.5;
  settings.tol_cost_rel = 1e-3;
  settings.max_refine_cg = 0;
  settings.refine_stationarity = false;
  settings.verbose = opts.verbose;
  NlpResult res = solve_nlp(tr.nlp, x0, settings);

  CentroidalTrajectory traj =
      unpack_trajectory(problem, tr.layout, res.x, wbd_ref);
  if (info) {
    info->status = res.status;
    info->cost = res.objective;
    info->max_violation = res.max_violation;
    info->outer_iterations = res.outer_iterations;
    info->inner_iterations = res.inner_iterations;
    info->seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
            .count();
  }
  if (res.max_violation > opts.tol_feas) {
    throw CentroidalSolveError(
        "centroidal solve did not reach feasibility tolerance (violation " +
            std::to_string(res.max_violation) + ")",
        traj, res.max_violation);
  }
  return traj;
}

}  // namespace quad
