#pragma once

#include "quad/centroidal.hpp"
#include "quad/whole_body.hpp"

namespace quad {

struct ConsensusError : std::runtime_error {
  ConsensusError(const std::string& msg, int iteration_arg)
      : std::runtime_error(msg), iteration(iteration_arg) {}
  int iteration;
};

struct ConsensusReport {
  std::vector<double> res_com;   // m, accumulated over the horizon
  std::vector<double> res_ee;    // m, accumulated over knots and legs
  std::vector<double> res_am;    // kg m^2/s
  std::vector<double> time_cen;  // s
  std::vector<double> time_wbd;  // s
  int iterations = 0;
};

struct ConsensusResiduals {
  double com = 0.0, ee = 0.0, am = 0.0;
};

ConsensusResiduals residuals(const RobotModel& model,
                             const CentroidalTrajectory& cen,
                             const WholeBodyTrajectory& wbd);

WbdReferenceBundle extract_wbd_reference(const WholeBodyTrajectory& wbd,
                                         const RobotModel& model);

struct ConsensusProblem {
  const RobotModel* model = nullptr;
  CentroidalProblem cen;
  WbdWeights wbd_weights;
  VecX q0, v0;
  CentroidalSolverOptions cen_options;
  DdpOptions wbd_options;
  // residual-based early exit; the fixed iteration count is the default
  bool early_exit = false;
  double early_exit_drop = 0.01;  // stop when all channels improve less than this
};

struct ConsensusResult {
  CentroidalTrajectory cen;
  WholeBodyTrajectory wbd;
  ConsensusReport report;
};

// K alternating rounds of centroidal and whole-body optimization with
// cross-fed references; K = 1 is the one-pass hierarchical baseline.
ConsensusResult alternate(const ConsensusProblem& problem, int iterations);

}  // namespace quad
