#pragma once

#include <array>
#include <memory>
#include <optional>

#include "quad/model.hpp"
#include "quad/schedule.hpp"
#include "quad/solvers/nlp.hpp"
#include "quad/terrain.hpp"

namespace quad {

struct CentroidalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Uniform-density ellipsoid with semi-axes e and ZYX orientation gamma,
// world-frame rotational inertia about its center.
Mat3 ellipsoid_inertia(const Vec3& e, const Vec3& gamma, double mass);

struct EllipsoidFit {
  Vec3 e;
  Vec3 gamma;
  double rho;  // uniform density reproducing the mass
};

// Inverts a rotational inertia into equivalent ellipsoid parameters.
// Throws CentroidalError when the principal moments are non-physical.
EllipsoidFit fit_ellipsoid_density(const Mat3& inertia, double mass);

struct CentroidalWeights {
  // tracking terms, active when a whole-body reference is supplied
  double track_com = 0.0;
  double track_lin_momentum = 0.0;
  double track_ang_momentum = 0.0;
  double track_inertia = 0.0;
  double track_foot = 0.0;
  // heuristic terms
  double foot_velocity = 1.0;
  double force_rate = 1e-6;
  double theta_rate = 1e-2;
  double force_reg = 1e-7;
  double ldot_reg = 1e-6;
};

struct CentroidalBoundary {
  Vec3 r0 = Vec3::Zero(), rd0 = Vec3::Zero();
  Vec3 theta0 = Vec3::Zero(), thetad0 = Vec3::Zero();
  Vec3 l0 = Vec3::Zero();
  std::vector<Vec3> feet0;  // world positions at knot 0
  std::optional<Vec3> r_final, rd_final, theta_final, thetad_final, l_final;
  // ellipsoid-orientation pins (ellipsoid mode only)
  std::optional<Vec3> gamma0, gamma_final;
};

// Intermediate hard equality pins (e.g. landing configurations).
struct CentroidalPin {
  int knot = 0;
  std::optional<Vec3> r, theta;
  std::vector<std::pair<int, Vec3>> feet;  // foot index -> world position
};

struct RomBox {
  Vec3 offset = Vec3::Zero();  // yaw-frame center relative to the com
  Vec3 half_extents = Vec3::Constant(0.3);
};

struct CentroidalProblem {
  double mass = 0.0;
  Vec3 gravity = Vec3(0, 0, -kDefaultGravity);
  ContactSchedule schedule;
  TerrainMap terrain = TerrainMap::none();
  bool use_ellipsoid = false;
  Mat3 fallback_inertia = Mat3::Identity() * 0.05;
  double fallback_density = 1000.0;
  CentroidalBoundary boundary;
  std::vector<CentroidalPin> pins;
  std::vector<RomBox> rom;  // per foot
  CentroidalWeights weights;
  double friction = 0.7;    // used when the terrain is undefined
  double force_bound = 500.0;
};

struct CentroidalKnot {
  Vec3 r, rd, rdd;
  Vec3 theta, thetad;
  Vec3 l, ld;
  std::array<Vec3, 4> p, f;
  Vec3 e = Vec3::Zero(), gamma = Vec3::Zero();
};

struct WbdReferenceBundle {
  std::vector<Vec3> r, k, l;
  std::vector<std::array<Vec3, 4>> p;
  std::vector<Mat3> inertia;  // world-frame CRB inertia per knot
  int size() const { return static_cast<int>(r.size()); }
};

struct CentroidalTrajectory {
  std::vector<CentroidalKnot> knots;
  double dt = 0.0;
  int size() const { return static_cast<int>(knots.size()); }
};

// Decision-variable layout per knot. Acceleration is eliminated through the
// velocity integration rows, so a knot carries 42 variables (48 with the
// ellipsoid parameters enabled).
struct CenLayout {
  static constexpr int kR = 0, kRd = 3, kTheta = 6, kThetad = 9;
  static constexpr int kL = 12, kLd = 15, kP = 18, kF = 30, kE = 42, kGamma = 45;
  int stride = 42;
  int n_knots = 0;
  int var(int knot, int field, int comp = 0) const {
    return knot * stride + field + comp;
  }
  int total() const { return stride * n_knots; }
};

struct CentroidalTranscription {
  CenLayout layout;
  NlpProblem nlp;
  VecX initial_guess;
  std::vector<std::string> row_labels;  // one label per constraint row
  // keeps the per-knot data referenced by the nlp callbacks alive
  std::shared_ptr<void> data;
};

CentroidalTranscription transcribe(const CentroidalProblem& problem,
                                   const WbdReferenceBundle* wbd_ref);

CentroidalTrajectory unpack_trajectory(const CentroidalProblem& problem,
                                       const CenLayout& layout, const VecX& x,
                                       const WbdReferenceBundle* wbd_ref);
VecX pack_trajectory(const CentroidalProblem& problem, const CenLayout& layout,
                     const CentroidalTrajectory& traj);

struct CentroidalSolveInfo {
  NlpStatus status = NlpStatus::kMaxIter;
  double cost = 0.0;
  double max_violation = 0.0;
  double seconds = 0.0;
  int outer_iterations = 0;
  int inner_iterations = 0;
};

struct CentroidalSolveError : CentroidalError {
  CentroidalSolveError(const std::string& msg, CentroidalTrajectory best_arg,
                       double violation_arg)
      : CentroidalError(msg), best(std::move(best_arg)), violation(violation_arg) {}
  CentroidalTrajectory best;
  double violation;
};

struct CentroidalSolverOptions {
  double tol_feas = 1e-4;
  int max_outer = 25;
  int max_inner = 2500;
  bool verbose = false;
};

CentroidalTrajectory solve_centroidal(const CentroidalProblem& problem,
                                      const WbdReferenceBundle* wbd_ref = nullptr,
                                      const CentroidalTrajectory* warm = nullptr,
                                      CentroidalSolveInfo* info = nullptr,
                                      const CentroidalSolverOptions& opts = {});

}  // namespace quad
