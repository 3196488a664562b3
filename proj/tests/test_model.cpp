#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <random>

#include "doctest.h"
#include "quad/euler.hpp"
#include "quad/model.hpp"
#include "test_util.hpp"

using namespace quad;
using namespace quad::testutil;

TEST_CASE("bundled model loads and validates") {
  RobotModel model = bundled_model();
  CHECK(model.n_links() == 13);
  CHECK(model.n_j() == 12);
  CHECK(model.n_f() == 4);
  CHECK(model.n_q() == 19);
  CHECK(model.n_v() == 18);
  CHECK(model.total_mass == doctest::Approx(9.0).epsilon(1e-12));
}

TEST_CASE("model file errors carry the offending link") {
  const char* zero_mass = R"({
    "links": [
      {"name": "base", "mass": 4.0, "com": [0,0,0], "inertia": [0.01,0.01,0.01]},
      {"name": "bad", "parent": "base", "origin": [0,0,0], "axis": [0,1,0],
       "mass": 0.0, "com": [0,0,0], "inertia": [1e-4,1e-4,1e-4]}
    ],
    "feet": []
  })";
  CHECK_THROWS_WITH_AS(parse_model(zero_mass),
                       doctest::Contains("non-positive mass"), ModelError);

  const char* self_parent = R"({
    "links": [
      {"name": "base", "mass": 4.0, "com": [0,0,0], "inertia": [0.01,0.01,0.01]},
      {"name": "loop", "parent": "loop", "origin": [0,0,0], "axis": [0,1,0],
       "mass": 0.1, "com": [0,0,0], "inertia": [1e-4,1e-4,1e-4]}
    ],
    "feet": []
  })";
  CHECK_THROWS_WITH_AS(parse_model(self_parent), doctest::Contains("cycle"),
                       ModelError);

  const char* bad_inertia = R"({
    "links": [
      {"name": "base", "mass": 4.0, "com": [0,0,0], "inertia": [0.05, 0.01, 0.01]}
    ],
    "feet": []
  })";
  CHECK_THROWS_WITH_AS(parse_model(bad_inertia),
                       doctest::Contains("triangle"), ModelError);
}

TEST_CASE("forward kinematics at the home configuration") {
  RobotModel model = bundled_model();
  GeneralizedState s = neutral_state(model);
  Kinematics kin = forward_kinematics(model, s.q);

  // hand-derived from the bundled geometry: hips at (+-0.19, +-0.111),
  // two 0.21 segments at -0.8 / +0.8 pitch leave the foot under the hip
  const double drop = 0.42 * std::cos(0.8);
  const Vec3 expected[4] = {
      {0.19, 0.111, -drop}, {0.19, -0.111, -drop},
      {-0.19, 0.111, -drop}, {-0.19, -0.111, -drop}};
  for (int f = 0; f < 4; ++f) {
    CHECK((kin.foot[f] - expected[f]).norm() == doctest::Approx(0.0).epsilon(1e-12));
  }
  // symmetric about the sagittal plane
  CHECK(kin.foot[0].x() == doctest::Approx(kin.foot[1].x()));
  CHECK(kin.foot[0].y() == doctest::Approx(-kin.foot[1].y()));
  CHECK(kin.com.y() == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("kinematics equivariance under rigid transforms") {
  RobotModel model = bundled_model();
  std::mt19937 rng(7);
  VecX q = random_q(model, rng);
  Kinematics kin = forward_kinematics(model, q);

  SUBCASE("translation") {
    const Vec3 d(0.3, -0.2, 0.15);
    VecX qt = q;
    qt.head<3>() += d;
    Kinematics kt = forward_kinematics(model, qt);
    for (int f = 0; f < model.n_f(); ++f) {
      CHECK((kt.foot[f] - kin.foot[f] - d).norm() < 1e-12);
    }
    CHECK((kt.com - kin.com - d).norm() < 1e-12);
  }
  SUBCASE("rotation about the base origin") {
    const Quat rot = quat_exp(Vec3(0.3, -0.5, 0.9));
    const Mat3 R = rot.toRotationMatrix();
    VecX qr = q;
    const Quat base(q[3], q[4], q[5], q[6]);
    const Quat rotated = rot * base;
    qr[3] = rotated.w();
    qr[4] = rotated.x();
    qr[5] = rotated.y();
    qr[6] = rotated.z();
    Kinematics kr = forward_kinematics(model, qr);
    const Vec3 pb = q.head<3>();
    for (int f = 0; f < model.n_f(); ++f) {
      const Vec3 expect = pb + R * (kin.foot[f] - pb);
      CHECK((kr.foot[f] - expect).norm() < 1e-12);
    }
  }
}

TEST_CASE("mass matrix structure and energy consistency") {
  RobotModel model = bundled_model();
  std::mt19937 rng(11);
  for (int trial = 0; trial < 100; ++trial) {
    VecX q = random_q(model, rng);
    MatX M = mass_matrix(model, q);
    CHECK((M - M.transpose()).cwiseAbs().maxCoeff() < 1e-12);
    if (trial < 20) {
      CHECK((M.topLeftCorner<3, 3>() - model.total_mass * Mat3::Identity())
                .cwiseAbs()
                .maxCoeff() < 1e-10);
      VecX v = random_v(model, rng);
      const double ke = 0.5 * v.dot(M * v);
      const double ke_oracle = kinetic_energy_oracle(model, q, v);
      CHECK(ke == doctest::Approx(ke_oracle).epsilon(1e-10));
      Eigen::LLT<MatX> llt(M);
      CHECK(llt.info() == Eigen::Success);
    }
  }
}

TEST_CASE("nonlinear effects: statics, homogeneity, power balance") {
  RobotModel model = bundled_model();
  std::mt19937 rng(13);
  const Vec3 g(0, 0, -kDefaultGravity);
  VecX q = random_q(model, rng);
  Kinematics kin = forward_kinematics(model, q);

  VecX c0 = nonlinear_effects(model, q, VecX::Zero(18), g);
  CHECK((c0.head<3>() - (-model.total_mass * g)).norm() < 1e-10);
  // angular base rows carry the gravity moment about the base origin
  const Vec3 expected_ang = -model.total_mass * (kin.com - q.head<3>()).cross(g);
  CHECK((c0.segment<3>(3) - expected_ang).norm() < 1e-9);

  SUBCASE("gravity rows equal the potential-energy gradient") {
    for (int k = 0; k < model.n_v(); ++k) {
      VecX delta = VecX::Zero(model.n_v());
      delta[k] = 1.0;
      const double h = 1e-6;
      auto potential = [&](const VecX& qq) {
        Kinematics kk = forward_kinematics(model, qq);
        double V = 0.0;
        for (int i = 0; i < model.n_links(); ++i) {
          V -= model.links[i].mass * g.dot(kk.com_link[i]);
        }
        return V;
      };
      const double dV = (potential(integrate_q(model, q, h * delta)) -
                         potential(integrate_q(model, q, -h * delta))) /
                        (2 * h);
      CHECK(c0[k] == doctest::Approx(dV).epsilon(1e-5));
    }
  }

  SUBCASE("velocity terms are quadratic in v") {
    VecX v = random_v(model, rng);
    VecX c1 = nonlinear_effects(model, q, v, g) - c0;
    VecX c2 = nonlinear_effects(model, q, 2.0 * v, g) - c0;
    CHECK((c2 - 4.0 * c1).cwiseAbs().maxCoeff() < 1e-9);
  }

  SUBCASE("power balance against finite-differenced mass matrix") {
    VecX v = random_v(model, rng);
    VecX c_vel = nonlinear_effects(model, q, v, Vec3::Zero());
    const double h = 1e-6;
    MatX Mp = mass_matrix(model, integrate_q(model, q, h * v));
    MatX Mm = mass_matrix(model, integrate_q(model, q, -h * v));
    MatX Mdot = (Mp - Mm) / (2 * h);
    CHECK(v.dot(c_vel) == doctest::Approx(0.5 * v.dot(Mdot * v)).epsilon(1e-6));
  }
}

TEST_CASE("centroidal momentum matrix against the transport oracle") {
  RobotModel model = bundled_model();
  std::mt19937 rng(17);

  SUBCASE("rigid translation") {
    GeneralizedState s = neutral_state(model);
    VecX v = VecX::Zero(18);
    v.head<3>() = Vec3(0.4, -0.2, 0.9);
    Vec6 h = centroidal_momentum_matrix(model, s.q) * v;
    CHECK((h.head<3>() - model.total_mass * v.head<3>()).norm() < 1e-10);
    CHECK(h.tail<3>().norm() < 1e-10);
  }

  SUBCASE("random states match per-link transported momenta") {
    for (int trial = 0; trial < 100; ++trial) {
      VecX q = random_q(model, rng);
      VecX v = random_v(model, rng);
      Vec6 h = centroidal_momentum_matrix(model, q) * v;
      Vec6 h_oracle = momentum_oracle(model, q, v);
      CHECK((h - h_oracle).norm() / h_oracle.norm() < 1e-8);
    }
  }

  SUBCASE("base block invertible at home") {
    GeneralizedState s = neutral_state(model);
    MatX A = centroidal_momentum_matrix(model, s.q);
    Eigen::JacobiSVD<MatX> svd(A.leftCols(6));
    CHECK(svd.singularValues().minCoeff() > 0.0);
    CHECK(svd.singularValues().maxCoeff() / svd.singularValues().minCoeff() < 1e8);
  }
}

TEST_CASE("cmm configuration derivative matches finite differences") {
  RobotModel model = bundled_model();
  std::mt19937 rng(23);
  VecX q = random_q(model, rng);
  VecX v = random_v(model, rng);
  MatX D = cmm_configuration_derivative(model, q, v);
  const double h = 1e-6;
  for (int k = 0; k < model.n_v(); ++k) {
    VecX delta = VecX::Zero(model.n_v());
    delta[k] = 1.0;
    Vec6 hp = centroidal_momentum_matrix(model, integrate_q(model, q, h * delta)) * v;
    Vec6 hm = centroidal_momentum_matrix(model, integrate_q(model, q, -h * delta)) * v;
    Vec6 fd = (hp - hm) / (2 * h);
    CHECK((D.col(k) - fd).norm() < 1e-5 * std::max(1.0, fd.norm()));
  }
}

TEST_CASE("crb inertia") {
  RobotModel model = bundled_model();
  std::mt19937 rng(19);
  VecX q = random_q(model, rng);

  SUBCASE("matches the parallel-axis summation oracle") {
    Kinematics kin = forward_kinematics(model, q);
    Mat3 I_oracle = Mat3::Zero();
    for (int i = 0; i < model.n_links(); ++i) {
      const Mat3 I_w = kin.R[i] * model.links[i].inertia * kin.R[i].transpose();
      const Vec3 d = kin.com_link[i] - kin.com;
      I_oracle += I_w + model.links[i].mass *
                            (d.squaredNorm() * Mat3::Identity() - d * d.transpose());
    }
    CHECK((crb_inertia(model, q) - I_oracle).cwiseAbs().maxCoeff() < 1e-10);
  }

  SUBCASE("tensor transformation under base rotation") {
    Mat3 I0 = crb_inertia(model, q);
    const Quat rot = quat_exp(Vec3(-0.7, 0.2, 0.4));
    VecX qr = q;
    const Quat base(q[3], q[4], q[5], q[6]);
    const Quat rotated = rot * base;
    qr[3] = rotated.w();
    qr[4] = rotated.x();
    qr[5] = rotated.y();
    qr[6] = rotated.z();
    const Mat3 R = rot.toRotationMatrix();
    CHECK((crb_inertia(model, qr) - R * I0 * R.transpose()).cwiseAbs().maxCoeff() <
          1e-10);
  }

  SUBCASE("locked-joint rigid rotation gives l = I_crb omega") {
    const Vec3 omega(0.3, -1.1, 0.8);
    Kinematics kin = forward_kinematics(model, q);
    VecX v = VecX::Zero(18);
    v.segment<3>(3) = omega;
    v.head<3>() = omega.cross(q.head<3>() - kin.com);
    Vec6 h = centroidal_momentum_matrix(model, q) * v;
    CHECK((h.tail<3>() - crb_inertia(model, q) * omega).norm() < 1e-9);
    CHECK(h.head<3>().norm() < 1e-9);
  }
}

namespace {

ContactSet all_feet_contacts(const RobotModel& model, const VecX& q) {
  Kinematics kin = forward_kinematics(model, q);
  ContactSet c;
  for (int f = 0; f < model.n_f(); ++f) {
    c.feet.push_back(f);
    c.points.push_back(kin.foot[f]);
    c.normals.push_back(Vec3::UnitZ());
  }
  return c;
}

}  // namespace

TEST_CASE("contact forward dynamics") {
  RobotModel model = bundled_model();
  std::mt19937 rng(29);

  SUBCASE("empty contact set is unconstrained dynamics") {
    VecX q = random_q(model, rng);
    VecX v = random_v(model, rng);
    VecX tau = random_v(model, rng).tail(12);
    auto res = contact_forward_dynamics(model, q, v, tau, ContactSet{});
    VecX b = -nonlinear_effects(model, q, v);
    b.tail(12) += tau;
    VecX vdot_ref = mass_matrix(model, q).llt().solve(b);
    CHECK((res.vdot - vdot_ref).norm() < 1e-9);
    CHECK(res.forces.size() == 0);
  }

  SUBCASE("KKT residual below 1e-9 on random states") {
    for (int trial = 0; trial < 100; ++trial) {
      VecX q = random_q(model, rng);
      VecX v = random_v(model, rng);
      VecX tau = 5.0 * random_v(model, rng).tail(12);
      ContactSet contacts = all_feet_contacts(model, q);
      auto res = contact_forward_dynamics(model, q, v, tau, contacts);
      MatX M = mass_matrix(model, q);
      VecX C = nonlinear_effects(model, q, v);
      MatX Jc = contact_jacobian(model, q, contacts.feet);
      VecX jdv = contact_bias_acceleration(model, q, v, contacts.feet);
      VecX tau_full = VecX::Zero(18);
      tau_full.tail(12) = tau;
      const double r1 =
          (M * res.vdot + C - tau_full - Jc.transpose() * res.forces).norm();
      const double r2 = (Jc * res.vdot + jdv).norm();
      CHECK(r1 < 1e-9 * std::max(1.0, C.norm()));
      CHECK(r2 < 1e-9 * std::max(1.0, jdv.norm()));
    }
  }

  SUBCASE("inverse dynamics round trip") {
    for (int trial = 0; trial < 20; ++trial) {
      VecX q = random_q(model, rng);
      VecX v = random_v(model, rng);
      VecX tau = 5.0 * random_v(model, rng).tail(12);
      ContactSet contacts = all_feet_contacts(model, q);
      auto fwd = contact_forward_dynamics(model, q, v, tau, contacts);
      VecX stacked = VecX::Zero(12);
      for (int k = 0; k < contacts.size(); ++k) {
        stacked.segment<3>(3 * contacts.feet[k]) = fwd.forces.segment<3>(3 * k);
      }
      auto inv = inverse_dynamics(model, q, v, fwd.vdot, stacked);
      CHECK((inv.tau - tau).cwiseAbs().maxCoeff() < 1e-8);
      CHECK(inv.base_residual.norm() < 1e-8);
    }
  }

  SUBCASE("rank-deficient contact throws") {
    const char* point_robot = R"({
      "links": [
        {"name": "base", "mass": 2.0, "com": [0,0,0], "inertia": [0.01,0.01,0.01]}
      ],
      "feet": [
        {"name": "a", "link": "base", "offset": [0,0,0]},
        {"name": "b", "link": "base", "offset": [0,0,0]}
      ]
    })";
    RobotModel pm = parse_model(point_robot);
    GeneralizedState s = neutral_state(pm);
    ContactSet c;
    c.feet = {0, 1};
    c.points = {Vec3::Zero(), Vec3::Zero()};
    c.normals = {Vec3::UnitZ(), Vec3::UnitZ()};
    CHECK_THROWS_AS(
        contact_forward_dynamics(pm, s.q, s.v, VecX::Zero(0), c),
        DegenerateContact);
  }
}

TEST_CASE("static stance consistency") {
  RobotModel model = bundled_model();
  GeneralizedState s = neutral_state(model);
  s.q[2] = 0.42 * std::cos(0.8);  // feet on the ground plane
  Kinematics kin = forward_kinematics(model, s.q);
  const Vec3 g(0, 0, -kDefaultGravity);

  // vertical force distribution with zero net moment about the com
  MatX Aeq(3, 4);
  for (int f = 0; f < 4; ++f) {
    const Vec3 d = kin.foot[f] - kin.com;
    Aeq(0, f) = 1.0;
    Aeq(1, f) = d.y();
    Aeq(2, f) = -d.x();
  }
  Vec3 beq(model.total_mass * kDefaultGravity, 0.0, 0.0);
  VecX fz = Aeq.jacobiSvd(Eigen::ComputeThinU | Eigen::ComputeThinV).solve(beq);
  VecX stacked = VecX::Zero(12);
  for (int f = 0; f < 4; ++f) stacked[3 * f + 2] = fz[f];

  auto inv = inverse_dynamics(model, s.q, s.v, VecX::Zero(18), stacked, g);
  CHECK(inv.base_residual.norm() < 1e-9);

  ContactSet contacts = all_feet_contacts(model, s.q);
  auto fwd = contact_forward_dynamics(model, s.q, s.v, inv.tau, contacts, g);
  CHECK(fwd.vdot.norm() < 1e-8);
}

TEST_CASE("ballistic inverse dynamics") {
  RobotModel model = bundled_model();
  std::mt19937 rng(31);
  VecX q = random_q(model, rng);
  const Vec3 g(0, 0, -kDefaultGravity);
  VecX vdot = VecX::Zero(18);
  vdot.head<3>() = g;
  auto inv = inverse_dynamics(model, q, VecX::Zero(18), vdot, VecX::Zero(12), g);
  CHECK(inv.base_residual.norm() < 1e-9);
  CHECK(inv.tau.norm() < 1e-9);
}

TEST_CASE("impact dynamics") {
  RobotModel model = bundled_model();
  std::mt19937 rng(37);

  SUBCASE("no contacts, no impact") {
    VecX q = random_q(model, rng);
    VecX v = random_v(model, rng);
    auto res = impact_dynamics(model, q, v, ContactSet{});
    CHECK((res.v_plus - v).norm() == 0.0);
  }

  SUBCASE("energy dissipation and idempotence on random states") {
    for (int trial = 0; trial < 100; ++trial) {
      VecX q = random_q(model, rng);
      VecX v = random_v(model, rng);
      ContactSet contacts = all_feet_contacts(model, q);
      auto res = impact_dynamics(model, q, v, contacts);
      MatX M = mass_matrix(model, q);
      CHECK(0.5 * res.v_plus.dot(M * res.v_plus) <=
            0.5 * v.dot(M * v) + 1e-10);
      // contact velocity is zeroed
      MatX Jc = contact_jacobian(model, q, contacts.feet);
      CHECK((Jc * res.v_plus).cwiseAbs().maxCoeff() < 1e-9);
      // momentum balance
      CHECK((M * (res.v_plus - v) - Jc.transpose() * res.impulses).norm() <
            1e-9 * std::max(1.0, v.norm()));
      auto res2 = impact_dynamics(model, q, res.v_plus, contacts);
      CHECK((res2.v_plus - res.v_plus).norm() < 1e-9);
    }
  }

  SUBCASE("falling point mass closed form") {
    const char* point_robot = R"({
      "links": [
        {"name": "base", "mass": 3.5, "com": [0,0,0], "inertia": [0.02,0.02,0.02]}
      ],
      "feet": [{"name": "a", "link": "base", "offset": [0,0,0]}]
    })";
    RobotModel pm = parse_model(point_robot);
    GeneralizedState s = neutral_state(pm);
    const double speed = 1.7;
    s.v[2] = -speed;
    ContactSet c;
    c.feet = {0};
    c.points = {Vec3::Zero()};
    c.normals = {Vec3::UnitZ()};
    auto res = impact_dynamics(pm, s.q, s.v, c);
    CHECK(res.v_plus.norm() < 1e-10);
    CHECK((res.impulses - Vec3(0, 0, 3.5 * speed)).norm() < 1e-10);
  }
}

TEST_CASE("centroidal momentum rate matches the contact-force wrench") {
  // simulate a short stance push with rigid contacts and compare the
  // finite-differenced centroidal momentum with the applied wrench
  RobotModel model = bundled_model();
  GeneralizedState s = neutral_state(model);
  s.q[2] = 0.42 * std::cos(0.8);
  const Vec3 g(0, 0, -kDefaultGravity);
  const double dt = 1e-5;

  VecX tau = VecX::Zero(12);
  for (int j = 0; j < 12; ++j) tau[j] = (j % 3 == 1) ? -1.5 : 0.8;

  VecX q = s.q, v = s.v;
  std::vector<VecX> qs, vs, forces;
  std::vector<Vec3> coms;
  ContactSet contacts = all_feet_contacts(model, q);
  for (int step = 0; step < 400; ++step) {
    auto res = contact_forward_dynamics(model, q, v, tau, contacts, g);
    qs.push_back(q);
    vs.push_back(v);
    forces.push_back(res.forces);
    coms.push_back(forward_kinematics(model, q).com);
    v += dt * res.vdot;
    q = integrate_q(model, q, dt * v);
  }
  int checked = 0;
  for (size_t i = 1; i + 1 < qs.size(); i += 40) {
    Vec6 hp = centroidal_momentum_matrix(model, qs[i + 1]) * vs[i + 1];
    Vec6 hm = centroidal_momentum_matrix(model, qs[i - 1]) * vs[i - 1];
    Vec6 hdot_fd = (hp - hm) / (2 * dt);
    Vec6 rhs = Vec6::Zero();
    rhs.head<3>() = model.total_mass * g;
    Kinematics kin = forward_kinematics(model, qs[i]);
    for (int f = 0; f < 4; ++f) {
      const Vec3 force = forces[i].segment<3>(3 * f);
      rhs.head<3>() += force;
      rhs.tail<3>() += (kin.foot[f] - coms[i]).cross(force);
    }
    CHECK((hdot_fd - rhs).norm() < 1e-3 * std::max(1.0, rhs.norm()));
    ++checked;
  }
  CHECK(checked > 5);
}

TEST_CASE("state integration and difference are consistent") {
  RobotModel model = bundled_model();
  std::mt19937 rng(41);
  VecX q = random_q(model, rng);
  VecX dq = 0.3 * random_v(model, rng);
  VecX q2 = integrate_q(model, q, dq);
  CHECK((difference_q(model, q2, q) - dq).norm() < 1e-10);
}
