#pragma once

#include <string>

#include "quad/consensus.hpp"
#include "quad/csv.hpp"
#include "quad/scenario.hpp"
#include "quad/sim.hpp"

namespace quad {

struct PipelineError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Trajectory artifacts, written with full precision so they round-trip
// bit-exactly through the loaders.
void write_cen_csv(const std::string& path, const CentroidalTrajectory& traj);
CentroidalTrajectory load_cen_csv(const std::string& path);

void write_wbd_csv(const std::string& path, const WholeBodyTrajectory& traj,
                   const RobotModel& model);
WholeBodyTrajectory load_wbd_csv(const std::string& path, const RobotModel& model);

void write_report_csv(const std::string& path, const ConsensusReport& report);
ConsensusReport load_report_csv(const std::string& path);
void write_report_table(const std::string& path, const ConsensusReport& report,
                        const std::string& scenario_name);

// Online reference: frozen CMM configurations from the whole-body solution,
// momentum targets from the centroidal solution.
std::vector<MpcReferenceKnot> build_mpc_reference(const RobotModel& model,
                                                  const ContactSchedule& schedule,
                                                  const CentroidalTrajectory& cen,
                                                  const WholeBodyTrajectory& wbd,
                                                  const TerrainMap& terrain,
                                                  const Vec3& gravity);

void write_closed_loop_csv(const std::string& dir, const ClosedLoopLog& log);

// Offline planning: alternating optimization, trajectories and the residual
// table land in out_dir.
void cmd_plan(const std::string& scenario_path, int iterations,
              const std::string& out_dir);
// Closed-loop tracking of a planned run; mode is "mpc" or "pd".
void cmd_track(const std::string& scenario_path, const std::string& mode,
               const std::string& out_dir);
// Residual tables and plot-data files from the artifacts in run_dir.
void cmd_report(const std::string& run_dir);

}  // namespace quad
