#include "wsod/geometry.hpp"

#include <algorithm>
#include <cstdio>
#include <stdexcept>

namespace wsod {

BBox make_box(double x_min, double y_min, double x_max, double y_max) {
  BBox b{x_min, y_min, x_max, y_max};
  if (!b.valid()) {
    throw std::invalid_argument("degenerate box " + to_string(b));
  }
  return b;
}

double intersection_area(const BBox& a, const BBox& b) {
  const double w = std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min);
  const double h = std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min);
  if (w <= 0.0 || h <= 0.0) return 0.0;
  return w * h;
}

double iou(const BBox& a, const BBox& b) {
  const double inter = intersection_area(a, b);
  if (inter <= 0.0) return 0.0;
  const double uni = a.area() + b.area() - inter;
  return std::clamp(inter / uni, 0.0, 1.0);
}

double overlap_fraction(const BBox& proposal, const BBox& reference) {
  const double area = proposal.area();
  if (area <= 0.0) return 0.0;
  return std::clamp(intersection_area(proposal, reference) / area, 0.0, 1.0);
}

BBox translate(const BBox& b, double dx, double dy) {
  return {b.x_min + dx, b.y_min + dy, b.x_max + dx, b.y_max + dy};
}

BBox clip(const BBox& b, double width, double height) {
  return {std::clamp(b.x_min, 0.0, width), std::clamp(b.y_min, 0.0, height),
          std::clamp(b.x_max, 0.0, width), std::clamp(b.y_max, 0.0, height)};
}

bool inside_image(const BBox& b, double width, double height) {
  return b.x_min >= 0.0 && b.y_min >= 0.0 && b.x_max <= width &&
         b.y_max <= height;
}

std::array<double, 4> to_array(const BBox& b) {
  return {b.x_min, b.y_min, b.x_max, b.y_max};
}

std::string to_string(const BBox& b) {
  char buf[128];
  std::snprintf(buf, sizeof(buf), "(%g,%g,%g,%g)", b.x_min, b.y_min, b.x_max,
                b.y_max);
  return buf;
}

}  // namespace wsod
