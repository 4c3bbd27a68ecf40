#pragma once

#include <algorithm>

namespace gcame {

/// Axis-aligned box in pixel coordinates, (x1, y1) top-left and (x2, y2) bottom-right.
struct Box {
  double x1 = 0, y1 = 0, x2 = 0, y2 = 0;

  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double area() const { return std::max(0.0, width()) * std::max(0.0, height()); }
  double center_x() const { return 0.5 * (x1 + x2); }
  double center_y() const { return 0.5 * (y1 + y2); }
  bool valid() const { return x1 < x2 && y1 < y2; }

  /// True when pixel (row, col), whose extent is [col, col+1) x [row, row+1),
  /// has its center inside the box.
  bool contains_pixel(int row, int col) const {
    const double cx = col + 0.5;
    const double cy = row + 0.5;
    return cx >= x1 && cx <= x2 && cy >= y1 && cy <= y2;
  }

  friend bool operator==(const Box&, const Box&) = default;
};

/// Intersection area over union area; 0 for disjoint or degenerate boxes.
inline double pairwise_iou(const Box& a, const Box& b) {
  const double ix = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double iy = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  if (ix <= 0 || iy <= 0) return 0.0;
  const double inter = ix * iy;
  const double uni = a.area() + b.area() - inter;
  return uni > 0 ? inter / uni : 0.0;
}

}  // namespace gcame
