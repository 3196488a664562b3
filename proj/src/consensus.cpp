#include "quad/consensus.hpp"

#include <chrono>

namespace quad {

ConsensusResiduals residuals(const RobotModel& model,
                             const CentroidalTrajectory& cen,
                             const WholeBodyTrajectory& wbd) {
  if (cen.size() != wbd.size()) {
    throw ConsensusError("trajectory knot counts differ", 0);
  }
  ConsensusResiduals out;
  for (int i = 0; i < cen.size(); ++i) {
    const Kinematics kin = forward_kinematics(model, wbd.knots[i].q);
    out.com += (cen.knots[i].r - kin.com).norm();
    for (int j = 0; j < model.n_f(); ++j) {
      out.ee += (cen.knots[i].p[j] - kin.foot[j]).norm();
    }
    const Vec6 h =
        centroidal_momentum_matrix(model, wbd.knots[i].q) * wbd.knots[i].v;
    out.am += (cen.knots[i].l - h.tail<3>()).norm();
  }
  return out;
}

WbdReferenceBundle extract_wbd_reference(const WholeBodyTrajectory& wbd,
                                         const RobotModel& model) {
  WbdReferenceBundle b;
  const int N = wbd.size();
  b.r.resize(N);
  b.k.resize(N);
  b.l.resize(N);
  b.p.resize(N);
  b.inertia.resize(N);
  for (int i = 0; i < N; ++i) {
    const VecX& q = wbd.knots[i].q;
    const Kinematics kin = forward_kinematics(model, q);
    b.r[i] = kin.com;
    const Vec6 h = centroidal_momentum_matrix(model, q) * wbd.knots[i].v;
    b.k[i] = h.head<3>();
    b.l[i] = h.tail<3>();
    for (int j = 0; j < model.n_f(); ++j) b.p[i][j] = kin.foot[j];
    b.inertia[i] = crb_inertia(model, q);
  }
  return b;
}

ConsensusResult alternate(const ConsensusProblem& problem, int iterations) {
  if (iterations < 1) throw ConsensusError("need at least one iteration", 0);
  const RobotModel& model = *problem.model;

  ConsensusResult out;
  WbdReferenceBundle bundle;
  bool have_bundle = false;
  bool have_prev = false;

  for (int k = 0; k < iterations; ++k) {
    CentroidalSolveInfo cen_info;
    try {
      out.cen = solve_centroidal(problem.cen, have_bundle ? &bundle : nullptr,
                                 have_prev ? &out.cen : nullptr, &cen_info,
                                 problem.cen_options);
    } catch (const CentroidalSolveError& err) {
      throw ConsensusError(
          std::string("centroidal solve failed: ") + err.what(), k + 1);
    }

    WbdProblem wbd_problem =
        make_wbd_problem(model, problem.cen.schedule, out.cen, problem.wbd_weights,
                         problem.q0, problem.v0, problem.cen.gravity,
                         problem.cen.friction);
    HybridOcp ocp = build_ocp(wbd_problem);
    DdpDiagnostics wbd_diag;
    try {
      out.wbd = ddp_solve(ocp, wbd_problem, have_prev ? &out.wbd : nullptr,
                          &wbd_diag, problem.wbd_options);
    } catch (const std::exception& err) {
      throw ConsensusError(std::string("whole-body solve failed: ") + err.what(),
                           k + 1);
    }

    bundle = extract_wbd_reference(out.wbd, model);
    have_bundle = true;
    have_prev = true;

    const ConsensusResiduals res = residuals(model, out.cen, out.wbd);
    out.report.res_com.push_back(res.com);
    out.report.res_ee.push_back(res.ee);
    out.report.res_am.push_back(res.am);
    out.report.time_cen.push_back(cen_info.seconds);
    out.report.time_wbd.push_back(wbd_diag.seconds);
    out.report.iterations = k + 1;

    if (problem.early_exit && k > 0) {
      const auto& rc = out.report.res_com;
      const auto& re = out.report.res_ee;
      const auto& ra = out.report.res_am;
      auto drop = [&](const std::vector<double>& v) {
        return (v[k - 1] - v[k]) / std::max(1e-12, v[k - 1]);
      };
      if (drop(rc) < problem.early_exit_drop && drop(re) < problem.early_exit_drop &&
          drop(ra) < problem.early_exit_drop) {
        break;
      }
    }
  }
  return out;
}

}  // namespace quad
