#include "quad/schedule.hpp"

#include <algorithm>

namespace quad {

bool ContactSchedule::in_stance(int foot, int knot) const {
  for (const auto& [b, e] : stance.at(foot)) {
    if (knot >= b && knot < e) return true;
  }
  return false;
}

bool ContactSchedule::stance_pair(int foot, int knot) const {
  for (const auto& [b, e] : stance.at(foot)) {
    if (knot >= b && knot + 1 < e) return true;
  }
  return false;
}

std::vector<int> ContactSchedule::touchdown_knots(int foot) const {
  std::vector<int> out;
  for (const auto& [b, e] : stance.at(foot)) {
    (void)e;
    if (b > 0) out.push_back(b);
  }
  return out;
}

std::vector<int> ContactSchedule::stance_feet(int knot) const {
  std::vector<int> out;
  for (int f = 0; f < n_feet(); ++f) {
    if (in_stance(f, knot)) out.push_back(f);
  }
  return out;
}

void ContactSchedule::validate() const {
  if (n_knots <= 0) throw ScheduleError("schedule needs n_knots > 0");
  if (!(dt > 0.0)) throw ScheduleError("schedule needs dt > 0");
  for (int f = 0; f < n_feet(); ++f) {
    auto intervals = stance[f];
    std::sort(intervals.begin(), intervals.end());
    int prev_end = 0;
    bool first = true;
    for (const auto& [b, e] : intervals) {
      if (b < 0 || e > n_knots || b >= e) {
        throw ScheduleError("stance interval out of range for foot " + std::to_string(f));
      }
      if (!first && b < prev_end) {
        throw ScheduleError("overlapping stance intervals for foot " + std::to_string(f));
      }
      prev_end = e;
      first = false;
    }
  }
}

}  // namespace quad
