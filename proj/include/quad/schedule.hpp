#pragma once

#include <stdexcept>
#include <utility>
#include <vector>

namespace quad {

struct ScheduleError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Per-foot stance intervals on a uniform knot grid: duration T split into
// n_knots steps of dt. Intervals are half-open knot ranges [begin, end).
struct ContactSchedule {
  int n_knots = 0;
  double dt = 0.0;
  std::vector<std::vector<std::pair<int, int>>> stance;  // per foot

  double duration() const { return n_knots * dt; }
  int n_feet() const { return static_cast<int>(stance.size()); }

  bool in_stance(int foot, int knot) const;
  // both knot and knot+1 inside one stance interval of this foot
  bool stance_pair(int foot, int knot) const;
  // knots where a swing->stance transition happens (interval starts > 0)
  std::vector<int> touchdown_knots(int foot) const;
  std::vector<int> stance_feet(int knot) const;

  void validate() const;
};

}  // namespace quad
