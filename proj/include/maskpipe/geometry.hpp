#pragma once

#include <algorithm>
#include <array>
#include <cmath>

#include "maskpipe/errors.hpp"

namespace maskpipe {

struct Point2 {
  double x = 0.0;
  double y = 0.0;

  friend bool operator==(const Point2&, const Point2&) = default;
};

// Axis-aligned box in pixel coordinates, origin top-left.
// A valid box has x_min < x_max and y_min < y_max.
struct BoundingBox {
  double x_min = 0.0;
  double y_min = 0.0;
  double x_max = 0.0;
  double y_max = 0.0;

  double width() const noexcept { return x_max - x_min; }
  double height() const noexcept { return y_max - y_min; }
  double area() const noexcept { return valid() ? width() * height() : 0.0; }
  bool valid() const noexcept {
    return std::isfinite(x_min) && std::isfinite(y_min) && std::isfinite(x_max) &&
           std::isfinite(y_max) && x_min < x_max && y_min < y_max;
  }

  BoundingBox clamped(double width_limit, double height_limit) const noexcept {
    return {std::clamp(x_min, 0.0, width_limit), std::clamp(y_min, 0.0, height_limit),
            std::clamp(x_max, 0.0, width_limit), std::clamp(y_max, 0.0, height_limit)};
  }

  BoundingBox translated(double dx, double dy) const noexcept {
    return {x_min + dx, y_min + dy, x_max + dx, y_max + dy};
  }

  friend bool operator==(const BoundingBox&, const BoundingBox&) = default;
};

inline BoundingBox make_box(double x_min, double y_min, double x_max, double y_max) {
  BoundingBox b{x_min, y_min, x_max, y_max};
  if (!b.valid()) throw ValidationError("degenerate bounding box");
  return b;
}

// Intersection over union; 0 for disjoint boxes.
inline double iou(const BoundingBox& a, const BoundingBox& b) noexcept {
  const double iw = std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min);
  const double ih = std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min);
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  const double inter = iw * ih;
  const double uni = a.area() + b.area() - inter;
  if (uni <= 0.0) return 0.0;
  return std::clamp(inter / uni, 0.0, 1.0);
}

// Five facial landmarks in fixed order.
struct Landmarks5 {
  enum Index { kLeftEye = 0, kRightEye = 1, kNose = 2, kLeftMouth = 3, kRightMouth = 4 };

  std::array<Point2, 5> points{};

  const Point2& operator[](std::size_t i) const { return points[i]; }
  Point2& operator[](std::size_t i) { return points[i]; }

  bool finite() const noexcept {
    return std::all_of(points.begin(), points.end(),
                       [](const Point2& p) { return std::isfinite(p.x) && std::isfinite(p.y); });
  }

  friend bool operator==(const Landmarks5&, const Landmarks5&) = default;
};

}  // namespace maskpipe
