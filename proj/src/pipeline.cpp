#include "quad/pipeline.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>

#include "quad/euler.hpp"

namespace quad {
namespace {

namespace fs = std::filesystem;

void push_vec(std::vector<double>& row, const Vec3& v) {
  row.push_back(v.x());
  row.push_back(v.y());
  row.push_back(v.z());
}

void push_cols(std::vector<std::string>& header, const std::string& base) {
  header.push_back(base + "_x");
  header.push_back(base + "_y");
  header.push_back(base + "_z");
}

}  // namespace

void write_cen_csv(const std::string& path, const CentroidalTrajectory& traj) {
  CsvTable t;
  t.header = {"knot", "t"};
  for (const char* base : {"r", "rd", "rdd", "th", "thd", "l", "ld"}) {
    push_cols(t.header, base);
  }
  for (int j = 0; j < 4; ++j) push_cols(t.header, "p" + std::to_string(j));
  for (int j = 0; j < 4; ++j) push_cols(t.header, "f" + std::to_string(j));
  push_cols(t.header, "e");
  push_cols(t.header, "gam");
  for (int i = 0; i < traj.size(); ++i) {
    const CentroidalKnot& k = traj.knots[i];
    std::vector<double> row = {static_cast<double>(i), i * traj.dt};
    push_vec(row, k.r);
    push_vec(row, k.rd);
    push_vec(row, k.rdd);
    push_vec(row, k.theta);
    push_vec(row, k.thetad);
    push_vec(row, k.l);
    push_vec(row, k.ld);
    for (int j = 0; j < 4; ++j) push_vec(row, k.p[j]);
    for (int j = 0; j < 4; ++j) push_vec(row, k.f[j]);
    push_vec(row, k.e);
    push_vec(row, k.gamma);
    t.rows.push_back(std::move(row));
  }
  write_csv(path, t);
}

CentroidalTrajectory load_cen_csv(const std::string& path) {
  const CsvTable t = read_csv(path);
  CentroidalTrajectory traj;
  if (t.rows.size() >= 2) traj.dt = t.rows[1][1] - t.rows[0][1];
  auto grab = [&](const std::vector<double>& row, int at) {
    return Vec3(row[at], row[at + 1], row[at + 2]);
  };
  const int base = t.col("r_x");
  for (const auto& row : t.rows) {
    CentroidalKnot k;
    int at = base;
    k.r = grab(row, at);
    k.rd = grab(row, at + 3);
    k.rdd = grab(row, at + 6);
    k.theta = grab(row, at + 9);
    k.thetad = grab(row, at + 12);
    k.l = grab(row, at + 15);
    k.ld = grab(row, at + 18);
    at += 21;
    for (int j = 0; j < 4; ++j) k.p[j] = grab(row, at + 3 * j);
    at += 12;
    for (int j = 0; j < 4; ++j) k.f[j] = grab(row, at + 3 * j);
    at += 12;
    k.e = grab(row, at);
    k.gamma = grab(row, at + 3);
    traj.knots.push_back(k);
  }
  return traj;
}

void write_wbd_csv(const std::string& path, const WholeBodyTrajectory& traj,
                   const RobotModel& model) {
  CsvTable t;
  t.header = {"type", "knot", "t", "feet_mask"};
  for (int i = 0; i < model.n_q(); ++i) t.header.push_back("q" + std::to_string(i));
  for (int i = 0; i < model.n_v(); ++i) t.header.push_back("v" + std::to_string(i));
  for (int i = 0; i < model.n_j(); ++i) t.header.push_back("tau" + std::to_string(i));
  for (int i = 0; i < 3 * model.n_f(); ++i) {
    t.header.push_back("F" + std::to_string(i));
  }
  auto impulse_at = [&](int knot) -> const ImpulseEvent* {
    for (const auto& ev : traj.impulses) {
      if (ev.knot == knot) return &ev;
    }
    return nullptr;
  };
  for (int i = 0; i < traj.size(); ++i) {
    const WholeBodyKnot& k = traj.knots[i];
    if (const ImpulseEvent* ev = impulse_at(i)) {
      std::vector<double> row = {1.0, static_cast<double>(i), i * traj.dt, 0.0};
      double mask = 0.0;
      VecX stacked = VecX::Zero(3 * model.n_f());
      for (size_t idx = 0; idx < ev->feet.size(); ++idx) {
        mask += 1 << ev->feet[idx];
        stacked.segment<3>(3 * ev->feet[idx]) = ev->impulses.segment<3>(3 * idx);
      }
      row[3] = mask;
      for (int c = 0; c < k.q.size(); ++c) row.push_back(k.q[c]);
      for (int c = 0; c < k.v.size(); ++c) row.push_back(k.v[c]);
      for (int c = 0; c < model.n_j(); ++c) row.push_back(0.0);
      for (int c = 0; c < stacked.size(); ++c) row.push_back(stacked[c]);
      t.rows.push_back(std::move(row));
    }
    std::vector<double> row = {0.0, static_cast<double>(i), i * traj.dt, 0.0};
    for (int c = 0; c < k.q.size(); ++c) row.push_back(k.q[c]);
    for (int c = 0; c < k.v.size(); ++c) row.push_back(k.v[c]);
    for (int c = 0; c < k.tau.size(); ++c) row.push_back(k.tau[c]);
    for (int c = 0; c < k.forces.size(); ++c) row.push_back(k.forces[c]);
    t.rows.push_back(std::move(row));
  }
  write_csv(path, t);
}

WholeBodyTrajectory load_wbd_csv(const std::string& path, const RobotModel& model) {
  const CsvTable t = read_csv(path);
  WholeBodyTrajectory traj;
  const int nq = model.n_q(), nv = model.n_v(), nj = model.n_j();
  const int base = 4;
  std::vector<double> times;
  for (const auto& row : t.rows) {
    const bool impulse = row[0] != 0.0;
    const int knot = static_cast<int>(row[1]);
    VecX q(nq), v(nv), tau(nj), F(3 * model.n_f());
    int at = base;
    for (int c = 0; c < nq; ++c) q[c] = row[at++];
    for (int c = 0; c < nv; ++c) v[c] = row[at++];
    for (int c = 0; c < nj; ++c) tau[c] = row[at++];
    for (int c = 0; c < 3 * model.n_f(); ++c) F[c] = row[at++];
    if (impulse) {
      ImpulseEvent ev;
      ev.knot = knot;
      const int mask = static_cast<int>(row[3]);
      std::vector<Vec3> imps;
      for (int j = 0; j < model.n_f(); ++j) {
        if (mask & (1 << j)) {
          ev.feet.push_back(j);
          imps.push_back(F.segment<3>(3 * j));
        }
      }
      ev.impulses.resize(3 * imps.size());
      for (size_t idx = 0; idx < imps.size(); ++idx) {
        ev.impulses.segment<3>(3 * idx) = imps[idx];
      }
      traj.impulses.push_back(std::move(ev));
      continue;
    }
    WholeBodyKnot k;
    k.q = q;
    k.v = v;
    k.tau = tau;
    k.forces = F;
    traj.knots.push_back(std::move(k));
    times.push_back(row[2]);
  }
  if (times.size() >= 2) traj.dt = times[1] - times[0];
  if (!traj.knots.empty()) {
    traj.q_final = traj.knots.back().q;
    traj.v_final = traj.knots.back().v;
  }
  return traj;
}

void write_report_csv(const std::string& path, const ConsensusReport& report) {
  CsvTable t;
  t.header = {"iteration", "res_com", "res_ee", "res_am", "time_cen", "time_wbd"};
  for (int k = 0; k < report.iterations; ++k) {
    t.rows.push_back({static_cast<double>(k + 1), report.res_com[k],
                      report.res_ee[k], report.res_am[k], report.time_cen[k],
                      report.time_wbd[k]});
  }
  write_csv(path, t);
}

ConsensusReport load_report_csv(const std::string& path) {
  const CsvTable t = read_csv(path);
  ConsensusReport report;
  for (const auto& row : t.rows) {
    report.res_com.push_back(row[1]);
    report.res_ee.push_back(row[2]);
    report.res_am.push_back(row[3]);
    report.time_cen.push_back(row[4]);
    report.time_wbd.push_back(row[5]);
  }
  report.iterations = static_cast<int>(t.rows.size());
  return report;
}

void write_report_table(const std::string& path, const ConsensusReport& report,
                        const std::string& scenario_name) {
  std::ofstream out(path);
  if (!out) throw PipelineError("cannot write " + path);
  out << "Scenario: " << scenario_name << "\n";
  out << "iter |  solve times CEN,WBD (s) | residuals CoM (m), EE (m), AM (kg m^2/s)\n";
  char buf[160];
  for (int k = 0; k < report.iterations; ++k) {
    std::snprintf(buf, sizeof(buf), "%4d | %10.2f, %8.2f | %10.4f, %10.4f, %10.4f\n",
                  k + 1, report.time_cen[k], report.time_wbd[k],
                  report.res_com[k], report.res_ee[k], report.res_am[k]);
    out << buf;
  }
}

std::vector<MpcReferenceKnot> build_mpc_reference(const RobotModel& model,
                                                  const ContactSchedule& schedule,
                                                  const CentroidalTrajectory& cen,
                                                  const WholeBodyTrajectory& wbd,
                                                  const TerrainMap& terrain,
                                                  const Vec3& gravity) {
  if (cen.size() != wbd.size() || cen.size() != schedule.n_knots) {
    throw PipelineError("trajectory lengths do not match the schedule");
  }
  std::vector<MpcReferenceKnot> out(cen.size());
  Vec3 theta_prev = Vec3::Zero();
  for (int i = 0; i < cen.size(); ++i) {
    MpcReferenceKnot& ref = out[i];
    const VecX& q = wbd.knots[i].q;
    ref.q = q;
    const Kinematics kin = forward_kinematics(model, q);
    ref.r = kin.com;
    for (int j = 0; j < 4; ++j) {
      ref.p[j] = kin.foot[j];
      ref.stance[j] = schedule.in_stance(j, i);
      if (ref.stance[j] && terrain.defined()) {
        ref.normal[j] = terrain.normal(ref.p[j].x(), ref.p[j].y());
      }
    }
    Vec3 theta = euler_zyx_from_quat(Quat(q[3], q[4], q[5], q[6]));
    if (i > 0) {
      for (int c = 0; c < 3; ++c) {
        theta[c] += 2 * M_PI * std::round((theta_prev[c] - theta[c]) / (2 * M_PI));
      }
    }
    theta_prev = theta;

    ref.x_ref = VecX::Zero(kMpcStateDim);
    ref.x_ref.segment<3>(0) = model.total_mass * cen.knots[i].rd;
    ref.x_ref.segment<3>(3) = cen.knots[i].l;
    ref.x_ref.segment<3>(6) = q.head<3>();
    ref.x_ref.segment<3>(9) = theta;
    ref.x_ref.segment(12, 12) = q.tail(12);
    ref.x_ref.segment(24, 12) = wbd.knots[i].v.tail(12);
    ref.x_ref.tail<3>() = gravity;
  }
  return out;
}

void write_closed_loop_csv(const std::string& dir, const ClosedLoopLog& log) {
  {
    CsvTable t;
    t.header = {"t"};
    for (int i = 0; i < 19; ++i) t.header.push_back("q" + std::to_string(i));
    for (int i = 0; i < 18; ++i) t.header.push_back("v" + std::to_string(i));
    for (int i = 0; i < 12; ++i) t.header.push_back("tau" + std::to_string(i));
    t.header.push_back("yaw");
    for (size_t i = 0; i < log.time.size(); ++i) {
      std::vector<double> row = {log.time[i]};
      for (int c = 0; c < 19; ++c) row.push_back(log.q[i][c]);
      for (int c = 0; c < 18; ++c) row.push_back(log.v[i][c]);
      for (int c = 0; c < 12; ++c) row.push_back(log.tau[i][c]);
      row.push_back(log.yaw[i]);
      t.rows.push_back(std::move(row));
    }
    write_csv(dir + "/closed_loop_log.csv", t);
  }
  {
    CsvTable t;
    t.header = {"t", "feasible", "solve_ms", "cost", "kkt_stationarity",
                "kkt_primal", "kkt_complementarity", "base_offset"};
    for (int i = 0; i < kMpcControlDim; ++i) {
      t.header.push_back("u" + std::to_string(i));
    }
    for (size_t i = 0; i < log.tick_time.size(); ++i) {
      std::vector<double> row = {
          log.tick_time[i],          static_cast<double>(log.tick_feasible[i]),
          log.tick_solve_ms[i],      log.tick_cost[i],
          log.tick_kkt_stat[i],      log.tick_kkt_primal[i],
          log.tick_kkt_comp[i],      log.base_offset[i]};
      for (int c = 0; c < kMpcControlDim; ++c) row.push_back(log.tick_u[i][c]);
      t.rows.push_back(std::move(row));
    }
    write_csv(dir + "/mpc_diag.csv", t);
  }
  {
    CsvTable t;
    t.header = {"leg", "time"};
    for (const auto& ev : log.touchdowns) {
      t.rows.push_back({static_cast<double>(ev.leg), ev.time});
    }
    write_csv(dir + "/touchdowns.csv", t);
  }
}

void cmd_plan(const std::string& scenario_path, int iterations,
              const std::string& out_dir) {
  Scenario sc = load_scenario(scenario_path);
  if (sc.requires_external_seed) {
    throw PipelineError("scenario '" + sc.name +
                        "' requires external retargeted seed data");
  }
  fs::create_directories(out_dir);

  ConsensusProblem cp;
  cp.model = &sc.model;
  cp.cen = sc.cen;
  cp.wbd_weights = sc.wbd_weights;
  cp.q0 = sc.initial.q;
  cp.v0 = sc.initial.v;
  cp.wbd_options.max_iterations = sc.wbd_max_iterations;
  const int iters = iterations > 0 ? iterations : sc.consensus_iterations;

  ConsensusResult result = alternate(cp, iters);
  write_cen_csv(out_dir + "/cen_trajectory.csv", result.cen);
  write_wbd_csv(out_dir + "/wbd_trajectory.csv", result.wbd, sc.model);
  write_report_csv(out_dir + "/consensus_report.csv", result.report);
  write_report_table(out_dir + "/consensus_report.txt", result.report, sc.name);
  std::ofstream meta(out_dir + "/run.json");
  meta << "{\n  \"scenario\": \"" << fs::absolute(scenario_path).string()
       << "\",\n  \"iterations\": " << iters << "\n}\n";
}

void cmd_track(const std::string& scenario_path, const std::string& mode,
               const std::string& out_dir) {
  Scenario sc = load_scenario(scenario_path);
  if (!fs::exists(out_dir + "/cen_trajectory.csv") ||
      !fs::exists(out_dir + "/wbd_trajectory.csv")) {
    throw PipelineError("no plan artifacts in " + out_dir + "; run plan first");
  }
  const CentroidalTrajectory cen = load_cen_csv(out_dir + "/cen_trajectory.csv");
  const WholeBodyTrajectory wbd =
      load_wbd_csv(out_dir + "/wbd_trajectory.csv", sc.model);

  const auto reference = build_mpc_reference(sc.model, sc.cen.schedule, cen, wbd,
                                             sc.cen.terrain, sc.cen.gravity);
  ClosedLoopConfig config;
  config.sim = sc.sim;
  config.mpc = sc.mpc;
  config.duration = sc.duration;
  if (mode == "mpc") {
    config.mode = ControllerMode::kMpcIdPd;
  } else if (mode == "pd") {
    config.mode = ControllerMode::kPdOnly;
  } else {
    throw PipelineError("mode must be 'mpc' or 'pd'");
  }
  GeneralizedState initial;
  initial.q = wbd.knots.front().q;
  initial.v = wbd.knots.front().v;
  ClosedLoopLog log = run_closed_loop(sc.model, reference, sc.cen.schedule,
                                      sc.cen.terrain, initial, config);
  write_closed_loop_csv(out_dir, log);
}

void cmd_report(const std::string& run_dir) {
  if (!fs::exists(run_dir + "/consensus_report.csv") &&
      !fs::exists(run_dir + "/cen_trajectory.csv")) {
    throw PipelineError("no run artifacts in " + run_dir);
  }
  const std::string report_dir = run_dir + "/report";
  fs::create_directories(report_dir + "/plots");

  if (fs::exists(run_dir + "/consensus_report.csv")) {
    const ConsensusReport report =
        load_report_csv(run_dir + "/consensus_report.csv");
    write_report_table(report_dir + "/residuals.txt", report, run_dir);
  }
  if (!fs::exists(run_dir + "/cen_trajectory.csv")) return;
  const CentroidalTrajectory cen = load_cen_csv(run_dir + "/cen_trajectory.csv");

  // foot heights: centroidal solution per foot (terrain fidelity plots)
  {
    CsvTable t;
    t.header = {"t"};
    for (int j = 0; j < 4; ++j) t.header.push_back("cen_p" + std::to_string(j) + "_z");
    for (int i = 0; i < cen.size(); ++i) {
      std::vector<double> row = {i * cen.dt};
      for (int j = 0; j < 4; ++j) row.push_back(cen.knots[i].p[j].z());
      t.rows.push_back(std::move(row));
    }
    write_csv(report_dir + "/plots/foot_z.csv", t);
  }
  // ellipsoid semi-axes
  {
    CsvTable t;
    t.header = {"t", "e_x", "e_y", "e_z"};
    for (int i = 0; i < cen.size(); ++i) {
      t.rows.push_back({i * cen.dt, cen.knots[i].e.x(), cen.knots[i].e.y(),
                        cen.knots[i].e.z()});
    }
    write_csv(report_dir + "/plots/ellipsoid.csv", t);
  }
  // angular momentum z
  {
    CsvTable t;
    t.header = {"t", "cen_l_z"};
    for (int i = 0; i < cen.size(); ++i) {
      t.rows.push_back({i * cen.dt, cen.knots[i].l.z()});
    }
    write_csv(report_dir + "/plots/lz.csv", t);
  }
  // yaw tracking when a closed-loop log is present
  if (fs::exists(run_dir + "/closed_loop_log.csv")) {
    const CsvTable log = read_csv(run_dir + "/closed_loop_log.csv");
    const int yaw_col = log.col("yaw");
    CsvTable t;
    t.header = {"t", "yaw"};
    for (const auto& row : log.rows) t.rows.push_back({row[0], row[yaw_col]});
    write_csv(report_dir + "/plots/yaw.csv", t);
  }
}

}  // namespace quad
