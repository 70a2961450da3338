#pragma once

#include <array>
#include <string>

namespace wsod {

// Axis-aligned box in continuous pixel coordinates. Half-open: a box
// (0,0,10,10) covers exactly 100 square pixels, no +1 correction.
struct BBox {
  double x_min = 0.0;
  double y_min = 0.0;
  double x_max = 0.0;
  double y_max = 0.0;

  double width() const { return x_max - x_min; }
  double height() const { return y_max - y_min; }
  double area() const { return width() * height(); }
  double center_x() const { return 0.5 * (x_min + x_max); }
  double center_y() const { return 0.5 * (y_min + y_max); }
  bool valid() const { return x_min < x_max && y_min < y_max; }

  friend bool operator==(const BBox&, const BBox&) = default;
};

// Throws std::invalid_argument unless x_min < x_max and y_min < y_max.
BBox make_box(double x_min, double y_min, double x_max, double y_max);

double intersection_area(const BBox& a, const BBox& b);

// Intersection over union (Jaccard index). 0 for disjoint boxes.
double iou(const BBox& a, const BBox& b);

// Fraction of `proposal`'s own area that lies inside `reference`.
double overlap_fraction(const BBox& proposal, const BBox& reference);

BBox translate(const BBox& b, double dx, double dy);

// Clips to [0,width] x [0,height]. The result may be degenerate when the box
// lies entirely outside the image; callers check valid().
BBox clip(const BBox& b, double width, double height);

bool inside_image(const BBox& b, double width, double height);

std::array<double, 4> to_array(const BBox& b);
std::string to_string(const BBox& b);

}  // namespace wsod
