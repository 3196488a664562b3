#pragma once

#include <string>

#include "quad/centroidal.hpp"
#include "quad/mpc.hpp"
#include "quad/sim.hpp"
#include "quad/whole_body.hpp"

namespace quad {

struct ScenarioError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// A fully-resolved task description: model, schedule, terrain, boundary
// conditions and every tunable for the planner, controller and simulator.
struct Scenario {
  std::string name;
  RobotModel model;
  CentroidalProblem cen;       // schedule/terrain/boundary/weights configured
  WbdWeights wbd_weights;
  int wbd_max_iterations = 120;
  MpcConfig mpc;
  SimConfig sim;
  GeneralizedState initial;    // simulator and whole-body start state
  int consensus_iterations = 3;
  double duration = 0.0;
  bool requires_external_seed = false;
};

Scenario load_scenario(const std::string& path);

}  // namespace quad
