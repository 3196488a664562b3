#include "quad/terrain.hpp"

#include <algorithm>
#include <cmath>

namespace quad {

TerrainMap TerrainMap::flat(double height, double friction) {
  TerrainMap t;
  t.kind_ = Kind::kFlat;
  t.flat_height_ = height;
  t.friction_ = friction;
  return t;
}

TerrainMap TerrainMap::none() { return TerrainMap(); }

TerrainMap TerrainMap::profile(std::vector<std::pair<double, double>> breakpoints,
                               double friction) {
  if (breakpoints.size() < 2) throw TerrainError("profile needs >= 2 breakpoints");
  if (!std::is_sorted(breakpoints.begin(), breakpoints.end(),
                      [](auto& a, auto& b) { return a.first < b.first; })) {
    throw TerrainError("profile breakpoints must be sorted by x");
  }
  TerrainMap t;
  t.kind_ = Kind::kProfile;
  t.breaks_ = std::move(breakpoints);
  t.friction_ = friction;
  return t;
}

double TerrainMap::height(double x, double y) const {
  (void)y;
  switch (kind_) {
    case Kind::kFlat:
      return flat_height_;
    case Kind::kProfile: {
      if (x <= breaks_.front().first) return breaks_.front().second;
      if (x >= breaks_.back().first) return breaks_.back().second;
      for (size_t i = 1; i < breaks_.size(); ++i) {
        if (x <= breaks_[i].first) {
          const auto& [x0, z0] = breaks_[i - 1];
          const auto& [x1, z1] = breaks_[i];
          return z0 + (z1 - z0) * (x - x0) / (x1 - x0);
        }
      }
      return breaks_.back().second;
    }
    case Kind::kNone:
      break;
  }
  throw TerrainError("terrain undefined (contact-free scenario)");
}

Eigen::Vector2d TerrainMap::height_gradient(double x, double y) const {
  (void)y;
  switch (kind_) {
    case Kind::kFlat:
      return Eigen::Vector2d::Zero();
    case Kind::kProfile: {
      if (x <= breaks_.front().first || x >= breaks_.back().first) {
        return Eigen::Vector2d::Zero();
      }
      for (size_t i = 1; i < breaks_.size(); ++i) {
        if (x <= breaks_[i].first) {
          const double slope = (breaks_[i].second - breaks_[i - 1].second) /
                               (breaks_[i].first - breaks_[i - 1].first);
          return Eigen::Vector2d(slope, 0.0);
        }
      }
      return Eigen::Vector2d::Zero();
    }
    case Kind::kNone:
      break;
  }
  throw TerrainError("terrain undefined (contact-free scenario)");
}

Vec3 TerrainMap::normal(double x, double y) const {
  const Eigen::Vector2d g = height_gradient(x, y);
  return Vec3(-g.x(), -g.y(), 1.0).normalized();
}

double TerrainMap::friction(double x, double y) const {
  (void)x;
  (void)y;
  if (kind_ == Kind::kNone) throw TerrainError("terrain undefined (contact-free scenario)");
  return friction_;
}

}  // namespace quad
