#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <filesystem>
#include <fstream>
#include <random>

#include "doctest.h"
#include "quad/pipeline.hpp"
#include "test_util.hpp"

using namespace quad;
using namespace quad::testutil;
namespace fs = std::filesystem;

namespace {

std::string scenario_path(const std::string& name) {
  return std::string(QUAD_ASSET_DIR) + "/scenarios/" + name;
}

std::string temp_dir(const std::string& tag) {
  const auto dir = fs::temp_directory_path() / ("quadplan_test_" + tag);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir.string();
}

}  // namespace

TEST_CASE("bundled twisting jump scenario") {
  Scenario sc = load_scenario(scenario_path("twisting_jump.json"));
  CHECK(sc.duration == doctest::Approx(1.0));
  CHECK(sc.cen.schedule.n_knots == 100);
  CHECK(sc.cen.schedule.dt == doctest::Approx(0.01));
  // phase boundaries at 0.3 s and 0.7 s
  for (int f = 0; f < 4; ++f) {
    CHECK(sc.cen.schedule.in_stance(f, 29));
    CHECK(!sc.cen.schedule.in_stance(f, 30));
    CHECK(!sc.cen.schedule.in_stance(f, 69));
    CHECK(sc.cen.schedule.in_stance(f, 70));
  }
  CHECK(!sc.cen.use_ellipsoid);
  REQUIRE(sc.cen.boundary.theta_final.has_value());
  CHECK(sc.cen.boundary.theta_final->z() == doctest::Approx(M_PI));
}

TEST_CASE("bundled zero-g scenario") {
  Scenario sc = load_scenario(scenario_path("zero_g_reorientation.json"));
  CHECK(sc.cen.gravity.norm() == 0.0);
  CHECK(sc.duration == doctest::Approx(2.0));
  CHECK(sc.cen.schedule.n_knots == 200);
  for (int f = 0; f < 4; ++f) CHECK(sc.cen.schedule.stance[f].empty());
  CHECK(sc.cen.use_ellipsoid);
  CHECK(!sc.cen.terrain.defined());
}

TEST_CASE("bundled parkour and cantering scenarios validate") {
  Scenario parkour = load_scenario(scenario_path("parkour.json"));
  CHECK(parkour.cen.schedule.n_knots == 240);
  CHECK(parkour.cen.terrain.defined());
  CHECK(parkour.cen.pins.size() == 2);
  // terrain profile has a deep gap between the inclines
  CHECK(parkour.cen.terrain.height(1.25, 0.0) < -0.5);
  CHECK(parkour.cen.terrain.height(0.7, 0.0) > 0.0);

  Scenario canter = load_scenario(scenario_path("cantering_template.json"));
  CHECK(canter.requires_external_seed);
  const std::string out = temp_dir("canter");
  CHECK_THROWS_WITH_AS(cmd_plan(scenario_path("cantering_template.json"), 1, out),
                       doctest::Contains("external retargeted seed"),
                       PipelineError);
}

TEST_CASE("overlapping stance intervals are rejected") {
  const std::string dir = temp_dir("badscen");
  const std::string path = dir + "/bad.json";
  {
    std::ofstream out(path);
    out << R"({
      "name": "bad",
      "model": ")" << QUAD_ASSET_DIR << R"(/quadruped.json",
      "duration": 0.5,
      "dt": 0.01,
      "terrain": {"type": "flat"},
      "contact_phases": {
        "fl": [[0.0, 0.3], [0.2, 0.5]],
        "fr": [[0.0, 0.5]],
        "rl": [[0.0, 0.5]],
        "rr": [[0.0, 0.5]]
      }
    })";
  }
  CHECK_THROWS_WITH_AS(load_scenario(path), doctest::Contains("overlap"),
                       ScenarioError);
}

TEST_CASE("artifact csvs round-trip bit-exactly") {
  RobotModel model = bundled_model();
  std::mt19937 rng(7);
  std::normal_distribution<double> g(0.0, 1.0);
  const std::string dir = temp_dir("roundtrip");

  CentroidalTrajectory cen;
  cen.dt = 0.01;
  cen.knots.resize(7);
  for (auto& k : cen.knots) {
    k.r = Vec3(g(rng), g(rng), g(rng));
    k.rd = Vec3(g(rng), g(rng), g(rng));
    k.rdd = Vec3(g(rng), g(rng), g(rng));
    k.theta = Vec3(g(rng), g(rng), g(rng));
    k.thetad = Vec3(g(rng), g(rng), g(rng));
    k.l = Vec3(g(rng), g(rng), g(rng));
    k.ld = Vec3(g(rng), g(rng), g(rng));
    for (int j = 0; j < 4; ++j) {
      k.p[j] = Vec3(g(rng), g(rng), g(rng));
      k.f[j] = Vec3(g(rng), g(rng), g(rng));
    }
    k.e = Vec3(std::abs(g(rng)) + 0.1, std::abs(g(rng)) + 0.1, std::abs(g(rng)) + 0.1);
    k.gamma = Vec3(g(rng), g(rng), g(rng));
  }
  write_cen_csv(dir + "/cen.csv", cen);
  const CentroidalTrajectory cen2 = load_cen_csv(dir + "/cen.csv");
  REQUIRE(cen2.size() == cen.size());
  for (int i = 0; i < cen.size(); ++i) {
    CHECK((cen2.knots[i].r - cen.knots[i].r).norm() == 0.0);
    CHECK((cen2.knots[i].rdd - cen.knots[i].rdd).norm() == 0.0);
    CHECK((cen2.knots[i].gamma - cen.knots[i].gamma).norm() == 0.0);
    for (int j = 0; j < 4; ++j) {
      CHECK((cen2.knots[i].f[j] - cen.knots[i].f[j]).norm() == 0.0);
    }
  }

  WholeBodyTrajectory wbd;
  wbd.dt = 0.01;
  wbd.knots.resize(5);
  for (auto& k : wbd.knots) {
    k.q = random_q(model, rng);
    k.v = random_v(model, rng);
    k.tau = random_v(model, rng).tail(12);
    k.forces = VecX::NullaryExpr(12, [&](int) { return g(rng); });
  }
  ImpulseEvent ev;
  ev.knot = 3;
  ev.feet = {1, 2};
  ev.impulses = VecX::NullaryExpr(6, [&](int) { return g(rng); });
  wbd.impulses.push_back(ev);
  wbd.q_final = wbd.knots.back().q;
  wbd.v_final = wbd.knots.back().v;
  write_wbd_csv(dir + "/wbd.csv", wbd, model);
  const WholeBodyTrajectory wbd2 = load_wbd_csv(dir + "/wbd.csv", model);
  REQUIRE(wbd2.size() == 5);
  REQUIRE(wbd2.impulses.size() == 1);
  CHECK(wbd2.impulses[0].knot == 3);
  CHECK(wbd2.impulses[0].feet == std::vector<int>{1, 2});
  CHECK((wbd2.impulses[0].impulses - ev.impulses).norm() == 0.0);
  for (int i = 0; i < 5; ++i) {
    CHECK((wbd2.knots[i].q - wbd.knots[i].q).norm() == 0.0);
    CHECK((wbd2.knots[i].v - wbd.knots[i].v).norm() == 0.0);
    CHECK((wbd2.knots[i].tau - wbd.knots[i].tau).norm() == 0.0);
    CHECK((wbd2.knots[i].forces - wbd.knots[i].forces).norm() == 0.0);
  }
}

TEST_CASE("report on an empty directory fails cleanly") {
  const std::string dir = temp_dir("empty");
  CHECK_THROWS_WITH_AS(cmd_report(dir), doctest::Contains("no run artifacts"),
                       PipelineError);
}

TEST_CASE("plan, track and report on the standing scenario") {
  const std::string dir = temp_dir("standing");
  cmd_plan(scenario_path("standing.json"), 2, dir);
  CHECK(fs::exists(dir + "/cen_trajectory.csv"));
  CHECK(fs::exists(dir + "/wbd_trajectory.csv"));
  CHECK(fs::exists(dir + "/consensus_report.csv"));
  const ConsensusReport report = load_report_csv(dir + "/consensus_report.csv");
  CHECK(report.iterations == 2);

  cmd_track(scenario_path("standing.json"), "mpc", dir);
  CHECK(fs::exists(dir + "/closed_loop_log.csv"));
  CHECK(fs::exists(dir + "/mpc_diag.csv"));
  const CsvTable diag = read_csv(dir + "/mpc_diag.csv");
  const int feas = diag.col("feasible");
  for (const auto& row : diag.rows) CHECK(row[feas] == 1.0);

  cmd_report(dir);
  CHECK(fs::exists(dir + "/report/residuals.txt"));
  CHECK(fs::exists(dir + "/report/plots/foot_z.csv"));
  CHECK(fs::exists(dir + "/report/plots/ellipsoid.csv"));
  CHECK(fs::exists(dir + "/report/plots/lz.csv"));
  CHECK(fs::exists(dir + "/report/plots/yaw.csv"));
}

TEST_CASE("plan with a single iteration emits the one-pass baseline row") {
  const std::string dir = temp_dir("standing1");
  cmd_plan(scenario_path("standing.json"), 1, dir);
  const ConsensusReport report = load_report_csv(dir + "/consensus_report.csv");
  CHECK(report.iterations == 1);
  CHECK(report.res_com.size() == 1);
}
