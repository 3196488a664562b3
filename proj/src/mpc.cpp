#include "quad/mpc.hpp"

#include <unsupported/Eigen/MatrixFunctions>
#include <chrono>

#include "quad/euler.hpp"

namespace quad {

EulerTransform euler_rate_transform(const Vec3& theta_b) {
  EulerTransform out;
  out.W = omega_to_rate(theta_b);  // guards the pitch singularity
  out.T_b = Mat6::Zero();
  out.T_b.topLeftCorner<3, 3>().setIdentity();
  out.T_b.bottomRightCorner<3, 3>() = out.W;
  return out;
}

TransformedCmms transformed_cmms(const RobotModel& model, const VecX& q) {
  const MatX A = centroidal_momentum_matrix(model, q);
  const Mat6 A_b = A.leftCols(6);
  Eigen::FullPivLU<Mat6> lu(A_b);
  if (!lu.isInvertible() ||
      lu.rcond() < 1e-8) {
    throw MpcError("base momentum block is near singular");
  }
  const Vec3 theta_b = euler_zyx_from_quat(Quat(q[3], q[4], q[5], q[6]));
  const EulerTransform T = euler_rate_transform(theta_b);
  TransformedCmms out;
  out.Ah = T.T_b * lu.inverse();
  out.Aj = -out.Ah * A.rightCols(model.n_j());
  return out;
}

VecX augmented_state(const RobotModel& model, const VecX& q, const VecX& v,
                     const Vec3& gravity) {
  VecX x(kMpcStateDim);
  x.head<6>() = centroidal_momentum_matrix(model, q) * v;
  x.segment<3>(6) = q.head<3>();
  x.segment<3>(9) = euler_zyx_from_quat(Quat(q[3], q[4], q[5], q[6]));
  x.segment(12, 12) = q.tail(12);
  x.segment(24, 12) = v.tail(12);
  x.tail<3>() = gravity;
  return x;
}

void continuous_matrices(const RobotModel& model, const MpcReferenceKnot& ref,
                         MatX& H, MatX& G) {
  H = MatX::Zero(kMpcStateDim, kMpcStateDim);
  G = MatX::Zero(kMpcStateDim, kMpcControlDim);
  const TransformedCmms cmm = transformed_cmms(model, ref.q);
  // kdot rows: gravity coupling
  H.block<3, 3>(0, 36) = model.total_mass * Mat3::Identity();
  // base coordinate rates from momentum and joint rates
  H.block<6, 6>(6, 0) = cmm.Ah;
  H.block<6, 12>(6, 24) = cmm.Aj;
  // q_j integrates qd_j
  H.block(12, 24, 12, 12).setIdentity();
  for (int j = 0; j < 4; ++j) {
    if (!ref.stance[j]) continue;  // swing feet get zero force columns
    G.block<3, 3>(0, 3 * j).setIdentity();
    G.block<3, 3>(3, 3 * j) = skew(ref.p[j] - ref.r);
  }
  G.block(24, 12, 12, 12).setIdentity();
}

void discretize(const MatX& H, const MatX& G, double dt, MatX& Hd, MatX& Gd) {
  if (dt <= 0.0) throw MpcError("discretization step must be positive");
  const int n = static_cast<int>(H.rows());
  const int m = static_cast<int>(G.cols());
  MatX aug = MatX::Zero(n + m, n + m);
  aug.topLeftCorner(n, n) = H * dt;
  aug.topRightCorner(n, m) = G * dt;
  const MatX expm = aug.exp();
  Hd = expm.topLeftCorner(n, n);
  Gd = expm.topRightCorner(n, m);
}

void condense(const std::vector<MatX>& Hd, const std::vector<MatX>& Gd, MatX& HA,
              MatX& GA) {
  const int n = static_cast<int>(Hd.size());
  if (n == 0 || Gd.size() != Hd.size()) throw MpcError("empty horizon");
  const int nx = static_cast<int>(Hd[0].rows());
  const int nu = static_cast<int>(Gd[0].cols());
  HA.resize(n * nx, nx);
  GA = MatX::Zero(n * nx, n * nu);
  MatX running = MatX::Identity(nx, nx);
  for (int i = 0; i < n; ++i) {
    running = Hd[i] * running;  // product Hd[i] ... Hd[0]
    HA.middleRows(i * nx, nx) = running;
    GA.block(i * nx, i * nu, nx, nu) = Gd[i];
    // propagate the previous block rows forward
    for (int c = 0; c < i; ++c) {
      GA.block(i * nx, c * nu, nx, nu) =
          Hd[i] * GA.block((i - 1) * nx, c * nu, nx, nu);
    }
  }
}

MpcController::MpcController(const RobotModel& model, const MpcConfig& config,
                             std::vector<MpcReferenceKnot> reference)
    : model_(model), config_(config), reference_(std::move(reference)) {
  if (reference_.empty()) throw MpcError("empty reference trajectory");
  if (config_.state_weights.size() != kMpcStateDim) {
    throw MpcError("state_weights must have 39 entries");
  }
  if (config_.control_weights.size() != kMpcControlDim) {
    throw MpcError("control_weights must have 24 entries");
  }
  config_.state_weights.tail<3>().setZero();  // gravity rows are never tracked
  cache_.assign(reference_.size(), std::nullopt);
}

const MpcController::Discretized& MpcController::cached(int knot) const {
  auto& slot = cache_.at(knot);
  if (!slot) {
    MatX H, G;
    continuous_matrices(model_, reference_[knot], H, G);
    Discretized d;
    discretize(H, G, config_.dt, d.Hd, d.Gd);
    slot = std::move(d);
  }
  return *slot;
}

void MpcController::assemble_step(const WindowStep& ws, MatX& Hd, MatX& Gd,
                                  VecX& x_target) const {
  const int last = reference_size() - 1;
  const int base = std::min(ws.base_knot, last);
  const bool uniform = ws.leg_knot[0] == base && ws.leg_knot[1] == base &&
                       ws.leg_knot[2] == base && ws.leg_knot[3] == base;
  if (uniform) {
    const Discretized& d = cached(base);
    Hd = d.Hd;
    Gd = d.Gd;
  } else {
    // legs run on shifted reference times: assemble a mixed knot
    MpcReferenceKnot mixed = reference_[base];
    for (int j = 0; j < 4; ++j) {
      const MpcReferenceKnot& leg = reference_[std::min(ws.leg_knot[j], last)];
      mixed.p[j] = leg.p[j];
      mixed.stance[j] = leg.stance[j];
      mixed.normal[j] = leg.normal[j];
      mixed.q.segment<3>(7 + 3 * j) = leg.q.segment<3>(7 + 3 * j);
    }
    MatX H, G;
    continuous_matrices(model_, mixed, H, G);
    discretize(H, G, config_.dt, Hd, Gd);
  }
  // target at the next step along the (shifted) reference
  const MpcReferenceKnot& base_next = reference_[std::min(base + 1, last)];
  x_target = base_next.x_ref;
  for (int j = 0; j < 4; ++j) {
    const MpcReferenceKnot& leg_next =
        reference_[std::min(ws.leg_knot[j] + 1, last)];
    x_target.segment<3>(12 + 3 * j) = leg_next.x_ref.segment<3>(12 + 3 * j);
    x_target.segment<3>(24 + 3 * j) = leg_next.x_ref.segment<3>(24 + 3 * j);
  }
}

MpcQp MpcController::build_qp(const VecX& x_k,
                              const std::vector<WindowStep>& window) const {
  const int n = static_cast<int>(window.size());
  if (n == 0) throw MpcError("empty window");
  std::vector<MatX> Hd(n), Gd(n);
  VecX x_ref_stack(n * kMpcStateDim);
  for (int i = 0; i < n; ++i) {
    VecX target;
    assemble_step(window[i], Hd[i], Gd[i], target);
    x_ref_stack.segment(i * kMpcStateDim, kMpcStateDim) = target;
  }
  MpcQp out;
  condense(Hd, Gd, out.HA, out.GA);
  out.x_ref_stack = x_ref_stack;

  VecX q_stack(n * kMpcStateDim), r_stack(n * kMpcControlDim);
  for (int i = 0; i < n; ++i) {
    q_stack.segment(i * kMpcStateDim, kMpcStateDim) = config_.state_weights;
    r_stack.segment(i * kMpcControlDim, kMpcControlDim) = config_.control_weights;
  }
  const VecX err0 = out.HA * x_k - x_ref_stack;
  out.qp.P = out.GA.transpose() * q_stack.asDiagonal() * out.GA;
  out.qp.P += MatX(r_stack.asDiagonal());
  out.qp.P = 0.5 * (out.qp.P + out.qp.P.transpose());
  out.qp.q = out.GA.transpose() * q_stack.cwiseProduct(err0);

  // constraint rows: friction pyramid + normal bounds per stance foot,
  // zero force for swing feet, joint acceleration box
  std::vector<Eigen::RowVectorXd> rows;
  std::vector<double> lo, hi;
  const double c_mu = config_.friction * 0.70710678118654752;
  const int last = reference_size() - 1;
  for (int i = 0; i < n; ++i) {
    const int ucol = i * kMpcControlDim;
    for (int j = 0; j < 4; ++j) {
      const MpcReferenceKnot& leg =
          reference_[std::min(window[i].leg_knot[j], last)];
      if (leg.stance[j]) {
        const Vec3 nrm = leg.normal[j];
        const Vec3 a = std::abs(nrm.z()) < 0.9 ? Vec3::UnitZ() : Vec3::UnitX();
        const Vec3 t1 = nrm.cross(a).normalized();
        const Vec3 t2 = nrm.cross(t1);
        auto frow = [&](const Vec3& dir) {
          Eigen::RowVectorXd row = Eigen::RowVectorXd::Zero(n * kMpcControlDim);
          row.segment<3>(ucol + 3 * j) = dir.transpose();
          return row;
        };
        rows.push_back(frow(t1 - c_mu * nrm));
        lo.push_back(-std::numeric_limits<double>::infinity());
        hi.push_back(0.0);
        rows.push_back(frow(-t1 - c_mu * nrm));
        lo.push_back(-std::numeric_limits<double>::infinity());
        hi.push_back(0.0);
        rows.push_back(frow(t2 - c_mu * nrm));
        lo.push_back(-std::numeric_limits<double>::infinity());
        hi.push_back(0.0);
        rows.push_back(frow(-t2 - c_mu * nrm));
        lo.push_back(-std::numeric_limits<double>::infinity());
        hi.push_back(0.0);
        rows.push_back(frow(nrm));
        lo.push_back(0.0);
        hi.push_back(config_.f_max);
      } else {
        for (int a = 0; a < 3; ++a) {
          Eigen::RowVectorXd row = Eigen::RowVectorXd::Zero(n * kMpcControlDim);
          row[ucol + 3 * j + a] = 1.0;
          rows.push_back(row);
          lo.push_back(0.0);
          hi.push_back(0.0);
        }
      }
    }
    for (int a = 0; a < 12; ++a) {
      Eigen::RowVectorXd row = Eigen::RowVectorXd::Zero(n * kMpcControlDim);
      row[ucol + 12 + a] = 1.0;
      rows.push_back(row);
      lo.push_back(-config_.a_max);
      hi.push_back(config_.a_max);
    }
  }
  out.qp.A.resize(rows.size(), n * kMpcControlDim);
  out.qp.lower.resize(rows.size());
  out.qp.upper.resize(rows.size());
  for (size_t r = 0; r < rows.size(); ++r) {
    out.qp.A.row(r) = rows[r];
    out.qp.lower[r] = lo[r];
    out.qp.upper[r] = hi[r];
  }
  return out;
}

MpcController::StepResult MpcController::step(
    const VecX& x_k, const std::vector<WindowStep>& window) {
  const auto t0 = std::chrono::steady_clock::now();
  MpcQp built = build_qp(x_k, window);
  const int nu_total = static_cast<int>(built.qp.q.size());

  QpSettings settings;
  settings.tol = config_.qp_tol;
  QpWarmStart warm;
  const bool have_warm =
      warm_u_.size() == nu_total && warm_y_.size() == built.qp.lower.size();
  if (have_warm) {
    warm.x = warm_u_;
    warm.y = warm_y_;
  }
  QpResult qp = solve_qp(built.qp, settings, have_warm ? &warm : nullptr);

  StepResult out;
  out.solve_ms = std::chrono::duration<double, std::milli>(
                     std::chrono::steady_clock::now() - t0)
                     .count();
  out.qp_iterations = qp.iterations;
  out.kkt_stationarity = qp.kkt_stationarity;
  out.kkt_primal = qp.kkt_primal;
  out.kkt_complementarity = qp.kkt_complementarity;
  if (qp.status == QpStatus::kInfeasible) {
    out.feasible = false;
    return out;
  }
  out.feasible = true;
  out.cost = qp.objective;
  out.u = qp.x.head(kMpcControlDim);
  // shift the solution one step for the next tick's warm start
  warm_u_ = qp.x;
  warm_u_.head(nu_total - kMpcControlDim) = qp.x.tail(nu_total - kMpcControlDim);
  if (warm_y_.size() != built.qp.lower.size()) {
    warm_y_ = VecX::Zero(built.qp.lower.size());
  } else {
    warm_y_ = qp.y;
  }
  return out;
}

}  // namespace quad
