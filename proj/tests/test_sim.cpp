#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"
#include "quad/sim.hpp"
#include "test_util.hpp"

using namespace quad;
using namespace quad::testutil;

namespace {

SimConfig default_sim() {
  SimConfig c;
  c.dt = 1e-4;
  c.kp = VecX::Constant(12, 80.0);
  c.kd = VecX::Constant(12, 2.0);
  return c;
}

}  // namespace

TEST_CASE("free fall follows the ballistic arc") {
  RobotModel model = bundled_model();
  GeneralizedState s = neutral_state(model);
  s.q[2] = 1.0;
  SimConfig config = default_sim();
  TerrainMap terrain = TerrainMap::flat(-10.0, 0.7);  // far below

  const double t_total = 0.1;
  const int steps = static_cast<int>(t_total / config.dt);
  const Vec3 com0 = forward_kinematics(model, s.q).com;
  for (int i = 0; i < steps; ++i) {
    s = sim_step(model, s, VecX::Zero(12), terrain, config);
  }
  const Vec3 com1 = forward_kinematics(model, s.q).com;
  const double dz_expected = -0.5 * kDefaultGravity * t_total * t_total;
  CHECK(std::abs((com1.z() - com0.z()) - dz_expected) < 1e-4);
  CHECK((com1.head<2>() - com0.head<2>()).norm() < 1e-12);
  // joints did not move in free fall
  CHECK((s.q.tail(12) - model.home_joints).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("standing with gravity compensation drifts less than a millimeter") {
  RobotModel model = bundled_model();
  GeneralizedState s = neutral_state(model);
  const SimConfig cfg = default_sim();
  TerrainMap terrain = TerrainMap::flat(0.0, 0.7);
  s.q[2] = 0.42 * std::cos(0.8);

  // settle into the compliant-ground equilibrium: PD plus a feedforward that
  // is refreshed from the measured contact forces as the velocities decay
  ContactMemory memory;
  ContactSample sample;
  VecX tau_gc = VecX::Zero(12);
  for (int round = 0; round < 8; ++round) {
    const VecX q_hold = s.q;
    for (int i = 0; i < 5000; ++i) {
      VecX tau = tau_gc;
      for (int j = 0; j < 12; ++j) {
        tau[j] += cfg.kp[j] * (q_hold[7 + j] - s.q[7 + j]) - 4.0 * s.v[6 + j];
      }
      s = sim_step(model, s, tau, terrain, cfg, &sample, &memory);
    }
    VecX stacked(12);
    for (int j = 0; j < 4; ++j) stacked.segment<3>(3 * j) = sample.force[j];
    tau_gc = inverse_dynamics(model, s.q, VecX::Zero(18), VecX::Zero(18), stacked).tau;
  }
  s.v.setZero();

  const double z0 = forward_kinematics(model, s.q).com.z();
  for (int i = 0; i < 10000; ++i) {  // 1 s open loop
    s = sim_step(model, s, tau_gc, terrain, cfg, &sample, &memory);
    // unilateral and friction-clamped contact forces at every substep
    for (int j = 0; j < 4; ++j) {
      const Vec3 f = sample.force[j];
      CHECK(f.z() >= 0.0);
      CHECK(f.head<2>().norm() <= 0.7 * f.z() + 1e-9);
    }
  }
  const double z1 = forward_kinematics(model, s.q).com.z();
  CHECK(std::abs(z1 - z0) < 1e-3);
  CHECK(sample.penetration[0] < 5e-3);  // compliant ground stays stiff enough
}

TEST_CASE("energy audit during a soft landing") {
  RobotModel model = bundled_model();
  GeneralizedState s = neutral_state(model);
  SimConfig config = default_sim();
  config.dt = 5e-5;
  TerrainMap terrain = TerrainMap::flat(0.0, 0.7);
  s.q[2] = 0.42 * std::cos(0.8) + 0.03;  // small drop

  VecX tau = VecX::Zero(12);
  tau.setConstant(0.3);  // arbitrary constant joint effort

  auto mechanical_energy = [&](const GeneralizedState& st) {
    const double ke = 0.5 * st.v.dot(mass_matrix(model, st.q) * st.v);
    double pe = 0.0;
    const Kinematics kin = forward_kinematics(model, st.q);
    for (int i = 0; i < model.n_links(); ++i) {
      pe += model.links[i].mass * kDefaultGravity * kin.com_link[i].z();
    }
    return ke + pe;
  };

  const double e0 = mechanical_energy(s);
  ContactMemory memory;
  double work = 0.0;
  const int steps = static_cast<int>(0.5 / config.dt);
  std::vector<int> all_feet = {0, 1, 2, 3};
  for (int i = 0; i < steps; ++i) {
    ContactSample sample;
    const VecX v_before = s.v;
    const VecX q_before = s.q;
    s = sim_step(model, s, tau, terrain, config, &sample, &memory);
    // midpoint work accumulation for torque and contact forces
    const VecX qd_mid = 0.5 * (v_before.tail(12) + s.v.tail(12));
    work += config.dt * tau.dot(qd_mid);
    const MatX Jc0 = contact_jacobian(model, q_before, all_feet);
    const MatX Jc1 = contact_jacobian(model, s.q, all_feet);
    const VecX vf_mid = 0.5 * (Jc0 * v_before + Jc1 * s.v);
    for (int j = 0; j < 4; ++j) {
      work += config.dt * sample.force[j].dot(vf_mid.segment<3>(3 * j));
    }
  }
  const double e1 = mechanical_energy(s);
  const double scale = std::max(1.0, std::abs(e1 - e0));
  CHECK(std::abs((e1 - e0) - work) / scale < 0.01);
}

TEST_CASE("velocity drop detector") {
  SUBCASE("constant velocity never fires") {
    std::vector<double> h(100, -2.0);
    CHECK(!detect_velocity_drop(h, 3.0, 8));
  }
  SUBCASE("synthetic step drop fires at the step") {
    std::vector<double> h(50, -5.0);
    for (int i = 30; i < 50; ++i) h[i] = -5.0 + 2.0 * 3.0;  // drop of 2x threshold
    const auto hit = detect_velocity_drop(h, 3.0, 8);
    REQUIRE(hit.has_value());
    CHECK(*hit == 30);
  }
}

namespace {

ContactSchedule jump_schedule() {
  // 1 s at 10 ms knots: stance, flight, landing
  ContactSchedule s;
  s.n_knots = 100;
  s.dt = 0.01;
  s.stance.assign(4, {{0, 30}, {70, 100}});
  return s;
}

}  // namespace

TEST_CASE("reference shifting rules") {
  ContactSchedule schedule = jump_schedule();  // nominal touchdown at 0.7 s

  SUBCASE("nominal timing keeps zero offsets") {
    ReferenceOffsets off = shift_reference(schedule, {}, 0.5);
    CHECK(off.global == 0.0);
    for (int j = 0; j < 4; ++j) CHECK(off.leg[j] == 0.0);
    off = shift_reference(schedule, {}, 0.9);  // all landed on time
    CHECK(off.global == 0.0);
  }

  SUBCASE("one early leg shifts only that leg") {
    std::vector<TouchdownEvent> events = {{2, 0.67}};
    ReferenceOffsets off = shift_reference(schedule, events, 0.68);
    CHECK(off.leg[2] == doctest::Approx(0.03));
    CHECK(off.leg[0] == 0.0);
    CHECK(off.global == 0.0);  // base untouched until all legs land
  }

  SUBCASE("all legs early shifts the base by the largest offset") {
    std::vector<TouchdownEvent> events = {
        {0, 0.67}, {1, 0.67}, {2, 0.67}, {3, 0.67}};
    ReferenceOffsets off = shift_reference(schedule, events, 0.675);
    CHECK(off.global == doctest::Approx(0.03));
    for (int j = 0; j < 4; ++j) {
      CHECK(off.leg[j] <= off.global + 1e-12);
    }
  }

  SUBCASE("offsets are monotone in time") {
    std::vector<TouchdownEvent> events;
    double prev_global = 0.0;
    for (double t = 0.6; t < 0.8; t += 0.01) {
      if (t >= 0.66 && events.empty()) events.push_back({0, 0.66});
      if (t >= 0.68 && events.size() == 1) {
        events.push_back({1, 0.68});
        events.push_back({2, 0.68});
        events.push_back({3, 0.68});
      }
      ReferenceOffsets off = shift_reference(schedule, events, t);
      CHECK(off.global >= prev_global - 1e-12);
      prev_global = off.global;
    }
  }
}

TEST_CASE("closed loop is deterministic and logs consistently") {
  RobotModel model = bundled_model();
  GeneralizedState s = neutral_state(model);
  s.q[2] = 0.42 * std::cos(0.8);

  // short standing scenario with a trivial reference
  ContactSchedule schedule;
  schedule.n_knots = 20;
  schedule.dt = 0.01;
  schedule.stance.assign(4, {{0, 20}});
  const Kinematics kin = forward_kinematics(model, s.q);
  MpcReferenceKnot ref;
  ref.q = s.q;
  ref.r = kin.com;
  for (int j = 0; j < 4; ++j) {
    ref.p[j] = kin.foot[j];
    ref.stance[j] = true;
  }
  ref.x_ref = augmented_state(model, s.q, s.v, Vec3(0, 0, -kDefaultGravity));
  std::vector<MpcReferenceKnot> reference(20, ref);

  ClosedLoopConfig config;
  config.sim = default_sim();
  config.sim.dt = 2e-4;
  config.mpc.horizon = 5;
  config.mpc.dt = 0.01;
  config.mpc.state_weights = VecX::Zero(kMpcStateDim);
  config.mpc.state_weights.segment<3>(0).setConstant(1.0);
  config.mpc.state_weights.segment<3>(3).setConstant(10.0);
  config.mpc.state_weights.segment<3>(6).setConstant(500.0);
  config.mpc.state_weights.segment<3>(9).setConstant(500.0);
  config.mpc.state_weights.segment(12, 12).setConstant(20.0);
  config.mpc.state_weights.segment(24, 12).setConstant(0.5);
  config.mpc.control_weights = VecX::Zero(kMpcControlDim);
  config.mpc.control_weights.head(12).setConstant(1e-6);
  config.mpc.control_weights.tail(12).setConstant(1e-5);
  config.duration = 0.2;

  ClosedLoopLog a = run_closed_loop(model, reference, schedule,
                                    TerrainMap::flat(0.0, 0.7), s, config);
  ClosedLoopLog b = run_closed_loop(model, reference, schedule,
                                    TerrainMap::flat(0.0, 0.7), s, config);
  REQUIRE(a.q.size() == b.q.size());
  for (size_t i = 0; i < a.q.size(); ++i) {
    CHECK((a.q[i] - b.q[i]).norm() == 0.0);
    CHECK((a.tau[i] - b.tau[i]).norm() == 0.0);
  }
  // bounded, non-divergent tracking on the standing task
  CHECK(std::abs(a.q.back()[2] - s.q[2]) < 0.01);
  CHECK(a.final_yaw == doctest::Approx(0.0).epsilon(0.02));
  for (int feasible : a.tick_feasible) CHECK(feasible == 1);
}
