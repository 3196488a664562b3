#include "quad/scenario.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace quad {
namespace {

using nlohmann::json;

Vec3 vec3_at(const json& j, const std::string& key, const Vec3& fallback) {
  if (!j.contains(key)) return fallback;
  const auto& a = j.at(key);
  if (!a.is_array() || a.size() != 3) {
    throw ScenarioError("field '" + key + "' must be a 3-array");
  }
  return Vec3(a[0].get<double>(), a[1].get<double>(), a[2].get<double>());
}

VecX vecn_at(const json& j, const std::string& key, const VecX& fallback) {
  if (!j.contains(key)) return fallback;
  const auto& a = j.at(key);
  VecX out(a.size());
  for (size_t i = 0; i < a.size(); ++i) out[i] = a[i].get<double>();
  return out;
}

TerrainMap parse_terrain(const json& j) {
  if (!j.contains("terrain")) throw ScenarioError("missing field 'terrain'");
  const auto& t = j.at("terrain");
  const std::string type = t.at("type").get<std::string>();
  if (type == "none") return TerrainMap::none();
  const double mu = t.value("friction", 0.7);
  if (type == "flat") return TerrainMap::flat(t.value("height", 0.0), mu);
  if (type == "profile") {
    std::vector<std::pair<double, double>> breaks;
    for (const auto& b : t.at("breakpoints")) {
      breaks.emplace_back(b.at(0).get<double>(), b.at(1).get<double>());
    }
    return TerrainMap::profile(std::move(breaks), mu);
  }
  throw ScenarioError("terrain.type must be one of none/flat/profile");
}

ContactSchedule parse_schedule(const json& j, double duration, double dt) {
  ContactSchedule s;
  s.dt = dt;
  s.n_knots = static_cast<int>(std::round(duration / dt));
  if (std::abs(s.n_knots * dt - duration) > 1e-9) {
    throw ScenarioError("duration must be an integer number of timesteps");
  }
  if (!j.contains("contact_phases")) {
    throw ScenarioError("missing field 'contact_phases'");
  }
  const auto& phases = j.at("contact_phases");
  static const char* feet[] = {"fl", "fr", "rl", "rr"};
  s.stance.resize(4);
  for (int f = 0; f < 4; ++f) {
    if (!phases.contains(feet[f])) {
      throw ScenarioError(std::string("contact_phases.") + feet[f] + " missing");
    }
    for (const auto& iv : phases.at(feet[f])) {
      const double t0 = iv.at(0).get<double>();
      const double t1 = iv.at(1).get<double>();
      const int k0 = static_cast<int>(std::round(t0 / dt));
      const int k1 = static_cast<int>(std::round(t1 / dt));
      s.stance[f].emplace_back(k0, k1);
    }
  }
  try {
    s.validate();
  } catch (const ScheduleError& e) {
    throw ScenarioError(std::string("contact_phases: ") + e.what());
  }
  return s;
}

}  // namespace

Scenario load_scenario(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ScenarioError("cannot open scenario file: " + path);
  json j;
  try {
    j = json::parse(in, nullptr, true, true);  // allow comments
  } catch (const json::parse_error& e) {
    throw ScenarioError(std::string("scenario parse failure: ") + e.what());
  }

  Scenario sc;
  sc.name = j.value("name", "scenario");
  sc.requires_external_seed = j.value("requires_external_seed", false);

  const std::string model_rel = j.value("model", "quadruped.json");
  const auto base_dir = std::filesystem::path(path).parent_path();
  sc.model = load_model((base_dir / model_rel).string());

  sc.duration = j.value("duration", 1.0);
  const double dt = j.value("dt", 0.01);
  sc.cen.schedule = parse_schedule(j, sc.duration, dt);
  sc.cen.terrain = parse_terrain(j);
  sc.cen.gravity = vec3_at(j, "gravity", Vec3(0, 0, -kDefaultGravity));
  sc.cen.mass = sc.model.total_mass;
  sc.cen.friction = sc.model.friction;
  if (j.contains("terrain") && j.at("terrain").contains("friction")) {
    sc.cen.friction = j.at("terrain").at("friction").get<double>();
  }

  // initial full-order state: home joints with an optional override, base
  // placed so the feet rest on the terrain (or at a given base pose)
  sc.initial = neutral_state(sc.model);
  const json init = j.value("initial", json::object());
  const VecX joints = vecn_at(init, "joints", sc.model.home_joints);
  if (joints.size() != sc.model.n_j()) {
    throw ScenarioError("initial.joints has wrong length");
  }
  sc.initial.q.tail(sc.model.n_j()) = joints;
  sc.initial.q.head<3>() = vec3_at(init, "base_position", Vec3::Zero());
  if (!init.contains("base_position") && sc.cen.terrain.defined()) {
    // drop the base until the lowest foot touches the ground
    Kinematics kin = forward_kinematics(sc.model, sc.initial.q);
    double shift = std::numeric_limits<double>::infinity();
    for (int f = 0; f < 4; ++f) {
      const double ground =
          sc.cen.terrain.height(kin.foot[f].x(), kin.foot[f].y());
      shift = std::min(shift, kin.foot[f].z() - ground);
    }
    sc.initial.q[2] -= shift;
  }

  const Kinematics kin0 = forward_kinematics(sc.model, sc.initial.q);
  sc.cen.boundary.r0 = kin0.com;
  sc.cen.boundary.feet0 = kin0.foot;

  const json fin = j.value("final", json::object());
  auto opt_vec = [&](const char* key) -> std::optional<Vec3> {
    if (!fin.contains(key) || fin.at(key).is_null()) return std::nullopt;
    return vec3_at(fin, key, Vec3::Zero());
  };
  sc.cen.boundary.r_final = opt_vec("r");
  if (fin.contains("r_offset")) {
    sc.cen.boundary.r_final = kin0.com + vec3_at(fin, "r_offset", Vec3::Zero());
  }
  sc.cen.boundary.rd_final = opt_vec("rd");
  sc.cen.boundary.theta_final = opt_vec("theta");
  sc.cen.boundary.thetad_final = opt_vec("thetad");
  sc.cen.boundary.l_final = opt_vec("l");
  sc.cen.boundary.gamma_final = opt_vec("gamma");  // relative, resolved below

  sc.cen.use_ellipsoid = j.value("inertia_mode", "crb") == std::string("ellipsoid");
  sc.cen.fallback_inertia = crb_inertia(sc.model, sc.initial.q);
  sc.cen.fallback_density =
      fit_ellipsoid_density(sc.cen.fallback_inertia, sc.model.total_mass).rho;
  if (sc.cen.use_ellipsoid) {
    const EllipsoidFit fit =
        fit_ellipsoid_density(sc.cen.fallback_inertia, sc.model.total_mass);
    sc.cen.boundary.gamma0 = fit.gamma;
    if (sc.cen.boundary.gamma_final) {
      // the file states the goal as a rotation from the initial fit
      *sc.cen.boundary.gamma_final += fit.gamma;
    }
  }

  // range-of-motion boxes around the nominal hip positions
  const json rom = j.value("rom", json::object());
  const Vec3 half = vec3_at(rom, "half_extents", Vec3(0.22, 0.18, 0.10));
  sc.cen.rom.assign(4, RomBox{Vec3::Zero(), half});
  for (int f = 0; f < 4; ++f) {
    sc.cen.rom[f].offset = kin0.foot[f] - kin0.com;
  }

  // intermediate hard pins
  for (const auto& pj : j.value("intermediate_pins", json::array())) {
    CentroidalPin pin;
    pin.knot = static_cast<int>(
        std::round(pj.at("time").get<double>() / sc.cen.schedule.dt));
    if (pj.contains("r")) pin.r = vec3_at(pj, "r", Vec3::Zero());
    if (pj.contains("theta")) pin.theta = vec3_at(pj, "theta", Vec3::Zero());
    if (pj.contains("feet")) {
      for (const auto& fj : pj.at("feet")) {
        pin.feet.emplace_back(fj.at("foot").get<int>(),
                              Vec3(fj.at("at").at(0).get<double>(),
                                   fj.at("at").at(1).get<double>(),
                                   fj.at("at").at(2).get<double>()));
      }
    }
    sc.cen.pins.push_back(pin);
  }

  const json cw = j.value("cen_weights", json::object());
  auto& w = sc.cen.weights;
  w.track_com = cw.value("track_com", 10.0);
  w.track_lin_momentum = cw.value("track_lin_momentum", 0.5);
  w.track_ang_momentum = cw.value("track_ang_momentum", 5.0);
  w.track_inertia = cw.value("track_inertia", 20.0);
  w.track_foot = cw.value("track_foot", 20.0);
  w.foot_velocity = cw.value("foot_velocity", 0.5);
  w.force_rate = cw.value("force_rate", 1e-6);
  w.theta_rate = cw.value("theta_rate", 1e-2);
  w.force_reg = cw.value("force_reg", 1e-7);
  w.ldot_reg = cw.value("ldot_reg", 1e-6);
  sc.cen.force_bound = cw.value("force_bound", 500.0);

  const json ww = j.value("wbd", json::object());
  sc.wbd_weights.track_com = ww.value("track_com", 200.0);
  sc.wbd_weights.track_lin_momentum = ww.value("track_lin_momentum", 2.0);
  sc.wbd_weights.track_ang_momentum = ww.value("track_ang_momentum", 10.0);
  sc.wbd_weights.track_foot = ww.value("track_foot", 400.0);
  sc.wbd_weights.torque_reg = ww.value("torque_reg", 2e-4);
  sc.wbd_weights.joint_vel_reg = ww.value("joint_vel_reg", 2e-3);
  sc.wbd_weights.posture_reg = ww.value("posture_reg", 0.0);
  sc.wbd_weights.terminal_scale = ww.value("terminal_scale", 20.0);
  sc.wbd_weights.barrier_limits = ww.value("barrier_limits", 2e2);
  sc.wbd_weights.barrier_friction = ww.value("barrier_friction", 1e-2);
  if (ww.contains("terminal_yaw")) {
    sc.wbd_weights.terminal_base_rotvec =
        Vec3(0, 0, ww.at("terminal_yaw").get<double>());
    sc.wbd_weights.terminal_orientation = ww.value("terminal_orientation", 500.0);
  }
  sc.wbd_max_iterations = ww.value("max_iterations", 120);

  const json mj = j.value("mpc", json::object());
  sc.mpc.horizon = mj.value("horizon", 5);
  sc.mpc.dt = mj.value("dt", sc.cen.schedule.dt);
  sc.mpc.friction = sc.cen.friction;
  sc.mpc.f_max = mj.value("f_max", 250.0);
  sc.mpc.a_max = mj.value("a_max", 800.0);
  sc.mpc.qp_tol = mj.value("tolerance", 1e-7);
  sc.mpc.state_weights = VecX::Zero(kMpcStateDim);
  sc.mpc.state_weights.segment<3>(0).setConstant(mj.value("w_lin_momentum", 1.0));
  sc.mpc.state_weights.segment<3>(3).setConstant(mj.value("w_ang_momentum", 20.0));
  sc.mpc.state_weights.segment<3>(6).setConstant(mj.value("w_base_pos", 500.0));
  sc.mpc.state_weights.segment<3>(9).setConstant(mj.value("w_base_ori", 800.0));
  sc.mpc.state_weights.segment(12, 12).setConstant(mj.value("w_joint_pos", 10.0));
  sc.mpc.state_weights.segment(24, 12).setConstant(mj.value("w_joint_vel", 0.2));
  sc.mpc.control_weights = VecX::Zero(kMpcControlDim);
  sc.mpc.control_weights.head(12).setConstant(mj.value("w_force", 1e-6));
  sc.mpc.control_weights.tail(12).setConstant(mj.value("w_accel", 1e-5));

  const json sj = j.value("sim", json::object());
  sc.sim.dt = sj.value("dt", 2e-4);
  sc.sim.contact_stiffness = sj.value("stiffness", 3e4);
  sc.sim.contact_damping = sj.value("damping", 60.0);
  sc.sim.tangent_stiffness = sj.value("tangent_stiffness", 3e4);
  sc.sim.friction = sc.cen.friction;
  sc.sim.kp = vecn_at(sj, "kp", VecX::Constant(12, 80.0));
  sc.sim.kd = vecn_at(sj, "kd", VecX::Constant(12, 2.0));
  sc.sim.td_drop = sj.value("td_drop", 4.0);
  sc.sim.td_window = sj.value("td_window", 10);
  sc.sim.gravity = sc.cen.gravity;
  if (sc.sim.dt > sc.mpc.dt + 1e-12) {
    throw ScenarioError("sim.dt must not exceed mpc.dt");
  }

  sc.consensus_iterations = j.value("consensus_iterations", 3);
  return sc;
}

}  // namespace quad
