#pragma once

#include <stdexcept>
#include <vector>

#include "quad/types.hpp"

namespace quad {

struct TerrainError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Height-field terrain. Either flat, or a piecewise-linear profile in x
// (constant along y). "none" marks contact-free scenarios; any query throws.
class TerrainMap {
 public:
  static TerrainMap flat(double height, double friction);
  static TerrainMap none();
  // breakpoints: (x, z) pairs sorted by x; extended flat beyond the ends
  static TerrainMap profile(std::vector<std::pair<double, double>> breakpoints,
                            double friction);

  bool defined() const { return kind_ != Kind::kNone; }

  double height(double x, double y) const;
  // (dh/dx, dh/dy)
  Eigen::Vector2d height_gradient(double x, double y) const;
  Vec3 normal(double x, double y) const;
  double friction(double x, double y) const;

 private:
  enum class Kind { kNone, kFlat, kProfile };
  Kind kind_ = Kind::kNone;
  double flat_height_ = 0.0;
  double friction_ = 0.7;
  std::vector<std::pair<double, double>> breaks_;
};

}  // namespace quad
