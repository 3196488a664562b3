#include "quad/model.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <fstream>
#include <sstream>

#include "quad/euler.hpp"
#include "json.hpp"

namespace quad {
namespace {

// Spatial vectors at the world origin, blocks [angular; linear].
using Mat6N = Eigen::Matrix<double, 6, Eigen::Dynamic>;

Vec6 cross_motion(const Vec6& a, const Vec6& b) {
  Vec6 out;
  out.head<3>() = a.head<3>().cross(b.head<3>());
  out.tail<3>() = a.head<3>().cross(b.tail<3>()) + a.tail<3>().cross(b.head<3>());
  return out;
}

Vec6 cross_force(const Vec6& a, const Vec6& f) {
  Vec6 out;
  out.head<3>() = a.head<3>().cross(f.head<3>()) + a.tail<3>().cross(f.tail<3>());
  out.tail<3>() = a.head<3>().cross(f.tail<3>());
  return out;
}

Mat6 spatial_inertia_at_origin(double m, const Vec3& com_w, const Mat3& inertia_com_w) {
  const Mat3 c_hat = skew(com_w);
  Mat6 I6;
  I6.topLeftCorner<3, 3>() = inertia_com_w - m * c_hat * c_hat;
  I6.topRightCorner<3, 3>() = m * c_hat;
  I6.bottomLeftCorner<3, 3>() = -m * c_hat;
  I6.bottomRightCorner<3, 3>() = m * Mat3::Identity();
  return I6;
}

struct SpatialData {
  Kinematics kin;
  std::vector<Mat6> I6;            // link spatial inertia at origin
  std::vector<Vec6> s;             // joint motion column (world, origin coords)
  std::vector<Mat6N> J;            // link spatial Jacobians
  // velocity-dependent
  std::vector<Vec6> vel;           // link spatial velocities
  std::vector<Vec6> bias;          // Jdot * v per link (zero joint accel)
};

SpatialData compute_spatial(const RobotModel& model, const VecX& q, const VecX* v) {
  validate_q(model, q);
  const int nl = model.n_links();
  const int nv = model.n_v();
  SpatialData d;
  d.kin.R.resize(nl);
  d.kin.p.resize(nl);
  d.kin.com_link.resize(nl);
  d.kin.axis_w.assign(nl, Vec3::Zero());
  d.I6.resize(nl);
  d.s.assign(nl, Vec6::Zero());
  d.J.assign(nl, Mat6N::Zero(6, nv));

  const Vec3 p_b = q.head<3>();
  const Quat quat(q[3], q[4], q[5], q[6]);
  d.kin.R[0] = quat.toRotationMatrix();
  d.kin.p[0] = p_b;

  // Base columns: [0; e] translations, [e; p_b x e] rotations.
  d.J[0].block<3, 3>(3, 0).setIdentity();
  d.J[0].block<3, 3>(0, 3).setIdentity();
  d.J[0].block<3, 3>(3, 3) = skew(p_b);

  Vec3 weighted_com = Vec3::Zero();
  for (int i = 0; i < nl; ++i) {
    const Link& link = model.links[i];
    if (i > 0) {
      const int par = link.parent;
      const Vec3 anchor = d.kin.p[par] + d.kin.R[par] * link.origin;
      const Vec3 axis_w = d.kin.R[par] * link.axis;
      d.kin.R[i] = d.kin.R[par] * Eigen::AngleAxisd(q[7 + model.joint_index[i]], link.axis).toRotationMatrix();
      d.kin.p[i] = anchor;
      d.kin.axis_w[i] = axis_w;
      d.s[i].head<3>() = axis_w;
      d.s[i].tail<3>() = anchor.cross(axis_w);
      d.J[i] = d.J[par];
      d.J[i].col(6 + model.joint_index[i]) = d.s[i];
    }
    d.kin.com_link[i] = d.kin.p[i] + d.kin.R[i] * link.com;
    const Mat3 I_w = d.kin.R[i] * link.inertia * d.kin.R[i].transpose();
    d.I6[i] = spatial_inertia_at_origin(link.mass, d.kin.com_link[i], I_w);
    weighted_com += link.mass * d.kin.com_link[i];
  }
  d.kin.com = weighted_com / model.total_mass;

  d.kin.foot.resize(model.n_f());
  for (int f = 0; f < model.n_f(); ++f) {
    const Foot& foot = model.feet[f];
    d.kin.foot[f] = d.kin.p[foot.link] + d.kin.R[foot.link] * foot.offset;
  }

  if (v != nullptr) {
    d.vel.resize(nl);
    d.bias.resize(nl);
    const Vec3 v_pb = v->head<3>();
    const Vec3 omega = v->segment<3>(3);
    d.vel[0].head<3>() = omega;
    d.vel[0].tail<3>() = v_pb + p_b.cross(omega);
    d.bias[0].head<3>().setZero();
    d.bias[0].tail<3>() = v_pb.cross(omega);
    for (int i = 1; i < nl; ++i) {
      const int par = model.links[i].parent;
      const double rate = (*v)[6 + model.joint_index[i]];
      d.vel[i] = d.vel[par] + d.s[i] * rate;
      // sdot = vel x s: the axis line is rigidly attached to link i
      d.bias[i] = d.bias[par] + cross_motion(d.vel[i], d.s[i]) * rate;
    }
  }
  return d;
}

Mat3 parse_inertia(const nlohmann::json& j, const std::string& link_name) {
  Mat3 I = Mat3::Zero();
  if (j.is_array() && j.size() == 3 && j[0].is_number()) {
    I.diagonal() << j[0].get<double>(), j[1].get<double>(), j[2].get<double>();
  } else if (j.is_array() && j.size() == 6) {
    // [ixx, iyy, izz, ixy, ixz, iyz]
    I(0, 0) = j[0].get<double>();
    I(1, 1) = j[1].get<double>();
    I(2, 2) = j[2].get<double>();
    I(0, 1) = I(1, 0) = j[3].get<double>();
    I(0, 2) = I(2, 0) = j[4].get<double>();
    I(1, 2) = I(2, 1) = j[5].get<double>();
  } else {
    throw ModelError("link '" + link_name + "': inertia must be [ixx,iyy,izz] or [ixx,iyy,izz,ixy,ixz,iyz]");
  }
  return I;
}

Vec3 parse_vec3(const nlohmann::json& j) {
  return Vec3(j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>());
}

}  // namespace

void RobotModel::finalize() {
  const int nl = n_links();
  if (nl == 0) throw ModelError("model has no links");
  if (links[0].parent != -1 || links[0].joint != JointType::kFloating) {
    throw ModelError("link 0 must be the floating base");
  }
  joint_index.assign(nl, -1);
  total_mass = 0.0;
  int jcount = 0;
  for (int i = 0; i < nl; ++i) {
    const Link& link = links[i];
    if (i > 0) {
      if (link.parent < 0 || link.parent >= i) {
        // parents must precede children; self/forward references are cycles
        throw ModelError("link '" + link.name + "': cycle or bad parent index");
      }
      if (link.joint != JointType::kRevolute) {
        throw ModelError("link '" + link.name + "': only the base may be floating");
      }
      if (link.axis.norm() < 1e-12) {
        throw ModelError("link '" + link.name + "': zero joint axis");
      }
      links[i].axis.normalize();
      joint_index[i] = jcount++;
    }
    if (!(link.mass > 0.0)) {
      throw ModelError("link '" + link.name + "': non-positive mass");
    }
    if ((link.inertia - link.inertia.transpose()).norm() > 1e-12) {
      throw ModelError("link '" + link.name + "': non-symmetric inertia");
    }
    Eigen::SelfAdjointEigenSolver<Mat3> es(link.inertia);
    const Vec3 lam = es.eigenvalues();
    if (lam.minCoeff() <= 0.0) {
      throw ModelError("link '" + link.name + "': non-SPD inertia");
    }
    if (lam[0] + lam[1] < lam[2] - 1e-12 * lam[2]) {
      throw ModelError("link '" + link.name + "': inertia violates triangle inequality");
    }
    total_mass += link.mass;
  }
  for (const Foot& f : feet) {
    if (f.link < 0 || f.link >= nl) {
      throw ModelError("foot '" + f.name + "': bad link index");
    }
  }
  const int nj = jcount;
  auto fit = [&](VecX& vec, double fill) {
    if (vec.size() == 0) vec = VecX::Constant(nj, fill);
    if (vec.size() != nj) throw ModelError("per-joint array has wrong length");
  };
  fit(joint_lower, -3.2);
  fit(joint_upper, 3.2);
  fit(torque_limit, 30.0);
  fit(home_joints, 0.0);
}

RobotModel parse_model(const std::string& json_text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ModelError(std::string("model parse failure: ") + e.what());
  }
  RobotModel model;
  model.name = j.value("name", "robot");
  model.friction = j.value("friction", 0.7);

  std::vector<std::string> names;
  for (const auto& lj : j.at("links")) {
    Link link;
    link.name = lj.at("name").get<std::string>();
    link.mass = lj.at("mass").get<double>();
    link.com = parse_vec3(lj.at("com"));
    link.inertia = parse_inertia(lj.at("inertia"), link.name);
    if (lj.contains("parent")) {
      const std::string pname = lj["parent"].get<std::string>();
      if (pname == link.name) throw ModelError("link '" + link.name + "': cycle (self parent)");
      auto it = std::find(names.begin(), names.end(), pname);
      if (it == names.end()) {
        throw ModelError("link '" + link.name + "': cycle or unknown parent '" + pname + "'");
      }
      link.parent = static_cast<int>(it - names.begin());
      link.joint = JointType::kRevolute;
      link.axis = parse_vec3(lj.at("axis"));
      link.origin = parse_vec3(lj.at("origin"));
    } else {
      link.parent = -1;
      link.joint = JointType::kFloating;
    }
    names.push_back(link.name);
    model.links.push_back(link);
  }
  for (const auto& fj : j.at("feet")) {
    Foot foot;
    foot.name = fj.at("name").get<std::string>();
    const std::string lname = fj.at("link").get<std::string>();
    auto it = std::find(names.begin(), names.end(), lname);
    if (it == names.end()) throw ModelError("foot '" + foot.name + "': unknown link '" + lname + "'");
    foot.link = static_cast<int>(it - names.begin());
    foot.offset = parse_vec3(fj.at("offset"));
    model.feet.push_back(foot);
  }
  auto read_vec = [&](const char* key, VecX& out) {
    if (!j.contains(key)) return;
    const auto& arr = j[key];
    out.resize(arr.size());
    for (size_t k = 0; k < arr.size(); ++k) out[k] = arr[k].get<double>();
  };
  read_vec("joint_lower", model.joint_lower);
  read_vec("joint_upper", model.joint_upper);
  read_vec("torque_limit", model.torque_limit);
  read_vec("home_joints", model.home_joints);
  model.finalize();
  return model;
}

RobotModel load_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ModelError("cannot open model file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_model(ss.str());
}

GeneralizedState neutral_state(const RobotModel& model) {
  GeneralizedState s;
  s.q = VecX::Zero(model.n_q());
  s.q[3] = 1.0;  // identity quaternion (w,x,y,z)
  s.q.tail(model.n_j()) = model.home_joints;
  s.v = VecX::Zero(model.n_v());
  return s;
}

void validate_q(const RobotModel& model, const VecX& q) {
  if (q.size() != model.n_q()) throw ModelError("q has wrong dimension");
  if (!q.allFinite()) throw ModelError("q contains non-finite entries");
  const double norm = q.segment<4>(3).norm();
  if (std::abs(norm - 1.0) > 1e-9) throw ModelError("quaternion not unit-norm");
}

Kinematics forward_kinematics(const RobotModel& model, const VecX& q) {
  return compute_spatial(model, q, nullptr).kin;
}

MatX mass_matrix(const RobotModel& model, const VecX& q) {
  SpatialData d = compute_spatial(model, q, nullptr);
  const int nv = model.n_v();
  MatX M = MatX::Zero(nv, nv);
  for (int i = 0; i < model.n_links(); ++i) {
    M.noalias() += d.J[i].transpose() * d.I6[i] * d.J[i];
  }
  return M;
}

VecX nonlinear_effects(const RobotModel& model, const VecX& q, const VecX& v,
                       const Vec3& gravity) {
  SpatialData d = compute_spatial(model, q, &v);
  const int nv = model.n_v();
  VecX c = VecX::Zero(nv);
  for (int i = 0; i < model.n_links(); ++i) {
    const Vec6 momentum = d.I6[i] * d.vel[i];
    Vec6 f = d.I6[i] * d.bias[i] + cross_force(d.vel[i], momentum);
    const Vec3 fg = model.links[i].mass * gravity;
    f.head<3>() -= d.kin.com_link[i].cross(fg);
    f.tail<3>() -= fg;
    c.noalias() += d.J[i].transpose() * f;
  }
  return c;
}

MatX centroidal_momentum_matrix(const RobotModel& model, const VecX& q) {
  SpatialData d = compute_spatial(model, q, nullptr);
  const int nv = model.n_v();
  MatX A_origin = MatX::Zero(6, nv);
  for (int i = 0; i < model.n_links(); ++i) {
    A_origin.noalias() += d.I6[i] * d.J[i];
  }
  MatX A(6, nv);
  A.topRows(3) = A_origin.bottomRows(3);
  A.bottomRows(3) = A_origin.topRows(3) - skew(d.kin.com) * A_origin.bottomRows(3);
  return A;
}

MatX cmm_configuration_derivative(const RobotModel& model, const VecX& q,
                                  const VecX& v) {
  SpatialData d = compute_spatial(model, q, &v);
  const int nv = model.n_v();
  const int nl = model.n_links();
  const Vec3 omega_v = v.segment<3>(3);

  // com Jacobian rows (k = m rdot)
  MatX A = centroidal_momentum_matrix(model, q);
  const MatX J_com = A.topRows(3) / model.total_mass;

  Vec3 k_total = Vec3::Zero();
  std::vector<Vec6> link_mom(nl);
  for (int i = 0; i < nl; ++i) {
    link_mom[i] = d.I6[i] * d.vel[i];
    k_total += link_mom[i].tail<3>();
  }

  MatX D(6, nv);
  std::vector<Vec6> w(nl), djv(nl);
  for (int col = 0; col < nv; ++col) {
    VecX delta = VecX::Zero(nv);
    delta[col] = 1.0;
    // spatial velocity of each link under the probe direction
    w[0].head<3>() = delta.segment<3>(3);
    w[0].tail<3>() = delta.head<3>() + q.head<3>().cross(delta.segment<3>(3));
    djv[0].head<3>().setZero();
    djv[0].tail<3>() = delta.head<3>().cross(omega_v);
    Vec6 dh_origin = Vec6::Zero();
    for (int i = 0; i < nl; ++i) {
      if (i > 0) {
        const int par = model.links[i].parent;
        w[i] = w[par] + d.s[i] * delta[6 + model.joint_index[i]];
        djv[i] = djv[par] + cross_motion(w[i], d.s[i]) * v[6 + model.joint_index[i]];
      }
      // d(I6)/dt under motion w: crf(w) I6 - I6 crm(w); applied to vel gives
      // crf(w) (I6 vel) - I6 (w x vel)
      dh_origin += cross_force(w[i], link_mom[i]) -
                   d.I6[i] * cross_motion(w[i], d.vel[i]) + d.I6[i] * djv[i];
    }
    const Vec3 dk = dh_origin.tail<3>();
    const Vec3 dr = J_com * delta;
    const Vec3 dl = dh_origin.head<3>() - dr.cross(k_total) - d.kin.com.cross(dk);
    D.col(col).head<3>() = dk;
    D.col(col).tail<3>() = dl;
  }
  return D;
}

Mat3 crb_inertia(const RobotModel& model, const VecX& q) {
  SpatialData d = compute_spatial(model, q, nullptr);
  Mat6 I6_total = Mat6::Zero();
  for (int i = 0; i < model.n_links(); ++i) I6_total += d.I6[i];
  const Mat3 r_hat = skew(d.kin.com);
  return I6_total.topLeftCorner<3, 3>() + model.total_mass * r_hat * r_hat;
}

namespace {

MatX contact_jacobian_from(const SpatialData& d, const RobotModel& model,
                           const std::vector<int>& feet) {
  MatX Jc(3 * feet.size(), model.n_v());
  for (size_t k = 0; k < feet.size(); ++k) {
    const Foot& foot = model.feet.at(feet[k]);
    const Vec3 x = d.kin.foot[feet[k]];
    Jc.middleRows(3 * k, 3) =
        d.J[foot.link].bottomRows(3) - skew(x) * d.J[foot.link].topRows(3);
  }
  return Jc;
}

}  // namespace

MatX contact_jacobian(const RobotModel& model, const VecX& q,
                      const std::vector<int>& feet) {
  SpatialData d = compute_spatial(model, q, nullptr);
  return contact_jacobian_from(d, model, feet);
}

VecX contact_bias_acceleration(const RobotModel& model, const VecX& q,
                               const VecX& v, const std::vector<int>& feet) {
  SpatialData d = compute_spatial(model, q, &v);
  VecX bias(3 * feet.size());
  for (size_t k = 0; k < feet.size(); ++k) {
    const Foot& foot = model.feet.at(feet[k]);
    const int i = foot.link;
    const Vec3 x = d.kin.foot[feet[k]];
    const Vec3 omega = d.vel[i].head<3>();
    const Vec3 point_vel = d.vel[i].tail<3>() + omega.cross(x);
    bias.segment<3>(3 * k) =
        d.bias[i].tail<3>() + d.bias[i].head<3>().cross(x) + omega.cross(point_vel);
  }
  return bias;
}

namespace {

constexpr double kDualRegularization = 1e-10;

// Solves S * x = rhs via the regularized factorization plus one refinement
// step against the unregularized S, so returned residuals stay near machine
// precision away from rank deficiency.
VecX solve_schur(const MatX& S, const Eigen::LDLT<MatX>& S_reg_ldlt,
                 const VecX& rhs) {
  VecX x = S_reg_ldlt.solve(rhs);
  x += S_reg_ldlt.solve(rhs - S * x);
  return x;
}

void check_contact_rank(const Eigen::LDLT<MatX>& ldlt) {
  const VecX dvec = ldlt.vectorD();
  if (dvec.size() == 0) return;
  if (dvec.minCoeff() < 1e-8 * std::max(1.0, dvec.maxCoeff())) {
    throw DegenerateContact("contact Jacobian is (near) rank deficient");
  }
}

}  // namespace

ContactDynamicsResult contact_forward_dynamics(const RobotModel& model,
                                               const VecX& q, const VecX& v,
                                               const VecX& tau,
                                               const ContactSet& contacts,
                                               const Vec3& gravity) {
  const int nj = model.n_j();
  if (tau.size() != nj) throw ModelError("tau has wrong dimension");
  const MatX M = mass_matrix(model, q);
  VecX b = -nonlinear_effects(model, q, v, gravity);
  b.tail(nj) += tau;

  Eigen::LLT<MatX> M_llt(M);
  ContactDynamicsResult out;
  if (contacts.feet.empty()) {
    out.vdot = M_llt.solve(b);
    out.forces = VecX::Zero(0);
    return out;
  }
  const MatX Jc = contact_jacobian(model, q, contacts.feet);
  const VecX jdv = contact_bias_acceleration(model, q, v, contacts.feet);
  const MatX MinvJt = M_llt.solve(Jc.transpose());
  const MatX S = Jc * MinvJt;
  MatX S_reg = S;
  S_reg.diagonal().array() += kDualRegularization;
  Eigen::LDLT<MatX> S_ldlt(S_reg);
  check_contact_rank(S_ldlt);

  const VecX rhs = -jdv - Jc * M_llt.solve(b);
  out.forces = solve_schur(S, S_ldlt, rhs);
  out.vdot = M_llt.solve(b + Jc.transpose() * out.forces);
  // one refinement pass on the primal row as well
  out.vdot += M_llt.solve(b + Jc.transpose() * out.forces - M * out.vdot);
  return out;
}

ImpactResult impact_dynamics(const RobotModel& model, const VecX& q,
                             const VecX& v_minus, const ContactSet& contacts) {
  ImpactResult out;
  if (contacts.feet.empty()) {
    out.v_plus = v_minus;
    out.impulses = VecX::Zero(0);
    return out;
  }
  const MatX M = mass_matrix(model, q);
  Eigen::LLT<MatX> M_llt(M);
  const MatX Jc = contact_jacobian(model, q, contacts.feet);
  const MatX S = Jc * M_llt.solve(Jc.transpose());
  MatX S_reg = S;
  S_reg.diagonal().array() += kDualRegularization;
  Eigen::LDLT<MatX> S_ldlt(S_reg);
  check_contact_rank(S_ldlt);

  out.impulses = solve_schur(S, S_ldlt, -(Jc * v_minus));
  out.v_plus = v_minus + M_llt.solve(Jc.transpose() * out.impulses);
  return out;
}

InverseDynamicsResult inverse_dynamics(const RobotModel& model, const VecX& q,
                                       const VecX& v, const VecX& vdot_des,
                                       const VecX& foot_forces,
                                       const Vec3& gravity) {
  if (foot_forces.size() != 3 * model.n_f()) {
    throw ModelError("foot_forces must stack 3 entries per foot");
  }
  std::vector<int> all_feet(model.n_f());
  for (int f = 0; f < model.n_f(); ++f) all_feet[f] = f;
  const MatX Jc = contact_jacobian(model, q, all_feet);
  const VecX balance = mass_matrix(model, q) * vdot_des +
                       nonlinear_effects(model, q, v, gravity) -
                       Jc.transpose() * foot_forces;
  InverseDynamicsResult out;
  out.tau = balance.tail(model.n_j());
  out.base_residual = balance.head<6>();
  return out;
}

VecX integrate_q(const RobotModel& model, const VecX& q, const VecX& dq) {
  if (dq.size() != model.n_v()) throw ModelError("dq has wrong dimension");
  VecX out = q;
  out.head<3>() += dq.head<3>();
  const Quat quat(q[3], q[4], q[5], q[6]);
  const Quat next = (quat_exp(dq.segment<3>(3)) * quat).normalized();
  out[3] = next.w();
  out[4] = next.x();
  out[5] = next.y();
  out[6] = next.z();
  out.tail(model.n_j()) += dq.tail(model.n_j());
  return out;
}

VecX difference_q(const RobotModel& model, const VecX& q1, const VecX& q0) {
  VecX out(model.n_v());
  out.head<3>() = q1.head<3>() - q0.head<3>();
  out.segment<3>(3) = quat_boxminus(Quat(q1[3], q1[4], q1[5], q1[6]),
                                    Quat(q0[3], q0[4], q0[5], q0[6]));
  out.tail(model.n_j()) = q1.tail(model.n_j()) - q0.tail(model.n_j());
  return out;
}

}  // namespace quad
