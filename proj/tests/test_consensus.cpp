#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"
#include "quad/consensus.hpp"
#include "test_util.hpp"

using namespace quad;
using namespace quad::testutil;

namespace {

WholeBodyTrajectory static_wbd(const RobotModel& model, int n_knots) {
  GeneralizedState s = neutral_state(model);
  s.q[2] = 0.42 * std::cos(0.8);
  WholeBodyTrajectory wbd;
  wbd.dt = 0.01;
  wbd.knots.resize(n_knots);
  for (auto& k : wbd.knots) {
    k.q = s.q;
    k.v = s.v;
    k.tau = VecX::Zero(12);
    k.forces = VecX::Zero(12);
  }
  wbd.q_final = s.q;
  wbd.v_final = s.v;
  return wbd;
}

CentroidalTrajectory cen_from_bundle(const WbdReferenceBundle& b, double mass,
                                     double dt) {
  CentroidalTrajectory cen;
  cen.dt = dt;
  cen.knots.resize(b.size());
  for (int i = 0; i < b.size(); ++i) {
    cen.knots[i].r = b.r[i];
    cen.knots[i].rd = b.k[i] / mass;
    cen.knots[i].l = b.l[i];
    for (int j = 0; j < 4; ++j) cen.knots[i].p[j] = b.p[i][j];
  }
  return cen;
}

}  // namespace

TEST_CASE("reference extraction from a static trajectory") {
  RobotModel model = bundled_model();
  WholeBodyTrajectory wbd = static_wbd(model, 15);
  WbdReferenceBundle b = extract_wbd_reference(wbd, model);
  CHECK(b.size() == 15);
  for (int i = 0; i < 15; ++i) {
    CHECK(b.k[i].norm() == 0.0);
    CHECK(b.l[i].norm() == 0.0);
    CHECK((b.inertia[i] - b.inertia[0]).cwiseAbs().maxCoeff() == 0.0);
    CHECK((b.inertia[i] - crb_inertia(model, wbd.knots[i].q)).cwiseAbs().maxCoeff() ==
          0.0);
  }
}

TEST_CASE("extracted momentum matches the cmm rows") {
  RobotModel model = bundled_model();
  std::mt19937 rng(31);
  WholeBodyTrajectory wbd = static_wbd(model, 5);
  for (auto& k : wbd.knots) {
    k.q = random_q(model, rng);
    k.v = random_v(model, rng);
  }
  WbdReferenceBundle b = extract_wbd_reference(wbd, model);
  for (int i = 0; i < 5; ++i) {
    const Vec6 h =
        centroidal_momentum_matrix(model, wbd.knots[i].q) * wbd.knots[i].v;
    CHECK((b.k[i] - h.head<3>()).norm() < 1e-10);
    CHECK((b.l[i] - h.tail<3>()).norm() < 1e-10);
  }
}

TEST_CASE("residual definitions") {
  RobotModel model = bundled_model();
  WholeBodyTrajectory wbd = static_wbd(model, 100);
  WbdReferenceBundle b = extract_wbd_reference(wbd, model);
  CentroidalTrajectory cen = cen_from_bundle(b, model.total_mass, wbd.dt);

  SUBCASE("identical trajectories give zero residuals") {
    ConsensusResiduals res = residuals(model, cen, wbd);
    CHECK(res.com == 0.0);
    CHECK(res.ee == 0.0);
    CHECK(res.am == 0.0);
  }

  SUBCASE("uniform 1 cm com offset over 100 knots accumulates to 1 m") {
    for (auto& k : cen.knots) k.r += Vec3(0.01, 0, 0);
    ConsensusResiduals res = residuals(model, cen, wbd);
    CHECK(res.com == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(res.ee == 0.0);
  }

  SUBCASE("single-knot angular momentum error") {
    cen.knots[42].l += Vec3(0, 0, 2.0);
    ConsensusResiduals res = residuals(model, cen, wbd);
    CHECK(res.am == doctest::Approx(2.0).epsilon(1e-12));
  }

  SUBCASE("length mismatch is rejected") {
    cen.knots.pop_back();
    CHECK_THROWS_AS(residuals(model, cen, wbd), ConsensusError);
  }
}

TEST_CASE("alternating loop on a standing task is deterministic") {
  RobotModel model = bundled_model();
  const int N = 15;

  ConsensusProblem cp;
  cp.model = &model;
  cp.cen.mass = model.total_mass;
  cp.cen.schedule.n_knots = N;
  cp.cen.schedule.dt = 0.01;
  cp.cen.schedule.stance.assign(4, {{0, N}});
  cp.cen.terrain = TerrainMap::flat(0.0, 0.7);
  GeneralizedState s = neutral_state(model);
  s.q[2] = 0.42 * std::cos(0.8);
  const Kinematics kin = forward_kinematics(model, s.q);
  cp.cen.boundary.r0 = kin.com;
  cp.cen.boundary.feet0 = {kin.foot[0], kin.foot[1], kin.foot[2], kin.foot[3]};
  cp.cen.fallback_inertia = crb_inertia(model, s.q);
  cp.cen.fallback_density =
      fit_ellipsoid_density(cp.cen.fallback_inertia, model.total_mass).rho;
  cp.cen.rom.assign(4, RomBox{Vec3(0, 0, -0.28), Vec3(0.3, 0.3, 0.3)});
  for (int j = 0; j < 4; ++j) cp.cen.rom[j].offset.head<2>() = kin.foot[j].head<2>();
  cp.cen.weights.track_com = 10.0;
  cp.cen.weights.track_lin_momentum = 1.0;
  cp.cen.weights.track_ang_momentum = 5.0;
  cp.cen.weights.track_foot = 10.0;
  cp.q0 = s.q;
  cp.v0 = s.v;
  cp.wbd_options.max_iterations = 30;

  ConsensusResult a = alternate(cp, 2);
  ConsensusResult b = alternate(cp, 2);
  CHECK(a.report.iterations == 2);
  REQUIRE(a.report.res_com.size() == 2);
  for (int k = 0; k < 2; ++k) {
    CHECK(a.report.res_com[k] == b.report.res_com[k]);
    CHECK(a.report.res_ee[k] == b.report.res_ee[k]);
    CHECK(a.report.res_am[k] == b.report.res_am[k]);
    CHECK(a.report.res_com[k] >= 0.0);
  }
  // a standing task should already be in near-consensus
  CHECK(a.report.res_com.back() < 0.5);
  CHECK(a.report.res_am.back() < 1.0);
}
