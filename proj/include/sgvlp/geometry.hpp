#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <stdexcept>

namespace sgvlp {

using Vec3 = std::array<double, 3>;

/// Axis-aligned box given by its center and per-axis extent (meters).
struct Aabb {
  Vec3 center{0, 0, 0};
  Vec3 size{1, 1, 1};

  bool valid() const { return size[0] > 0 && size[1] > 0 && size[2] > 0; }
  double volume() const { return size[0] * size[1] * size[2]; }
  double min(int axis) const { return center[axis] - 0.5 * size[axis]; }
  double max(int axis) const { return center[axis] + 0.5 * size[axis]; }

  /// Corner k has bit a of k selecting the max side on axis a.
  std::array<Vec3, 8> corners() const {
    std::array<Vec3, 8> out{};
    for (int k = 0; k < 8; ++k) {
      for (int a = 0; a < 3; ++a) out[k][a] = (k >> a) & 1 ? max(a) : min(a);
    }
    return out;
  }

  bool contains(const Aabb& inner) const {
    for (int a = 0; a < 3; ++a) {
      if (inner.min(a) < min(a) || inner.max(a) > max(a)) return false;
    }
    return true;
  }

  friend bool operator==(const Aabb&, const Aabb&) = default;
};

inline double intersection_volume(const Aabb& a, const Aabb& b) {
  double v = 1.0;
  for (int ax = 0; ax < 3; ++ax) {
    const double lo = std::max(a.min(ax), b.min(ax));
    const double hi = std::min(a.max(ax), b.max(ax));
    if (hi <= lo) return 0.0;
    v *= hi - lo;
  }
  return v;
}

/// Intersection over union of two axis-aligned boxes, in [0, 1].
inline double iou_aabb(const Aabb& a, const Aabb& b) {
  if (!a.valid() || !b.valid()) throw std::invalid_argument("iou_aabb: degenerate box");
  if (a == b) return 1.0;
  const double inter = intersection_volume(a, b);
  if (inter <= 0.0) return 0.0;
  const double uni = a.volume() + b.volume() - inter;
  return std::clamp(inter / uni, 0.0, 1.0);
}

inline double center_distance(const Aabb& a, const Aabb& b) {
  double s = 0;
  for (int ax = 0; ax < 3; ++ax) s += (a.center[ax] - b.center[ax]) * (a.center[ax] - b.center[ax]);
  return std::sqrt(s);
}

}  // namespace sgvlp
