#include "wsod/box_coder.hpp"

#include <algorithm>
#include <cmath>

namespace wsod {

namespace {
// Caps exp() in decode so a wild regression output cannot overflow.
const double kMaxLogScale = std::log(1000.0 / 16.0);
}  // namespace

Deltas encode_box(const BBox& reference, const BBox& target,
                  const DeltaWeights& wt) {
  const double w = reference.width();
  const double h = reference.height();
  return {wt[0] * (target.center_x() - reference.center_x()) / w,
          wt[1] * (target.center_y() - reference.center_y()) / h,
          wt[2] * std::log(target.width() / w),
          wt[3] * std::log(target.height() / h)};
}

BBox decode_box(const BBox& reference, const Deltas& d,
                const DeltaWeights& wt) {
  const double w = reference.width();
  const double h = reference.height();
  const double cx = reference.center_x() + d[0] / wt[0] * w;
  const double cy = reference.center_y() + d[1] / wt[1] * h;
  const double nw = w * std::exp(std::min(d[2] / wt[2], kMaxLogScale));
  const double nh = h * std::exp(std::min(d[3] / wt[3], kMaxLogScale));
  return {cx - 0.5 * nw, cy - 0.5 * nh, cx + 0.5 * nw, cy + 0.5 * nh};
}

std::vector<BBox> generate_anchors(int feat_h, int feat_w, double stride,
                                   std::span<const double> scales,
                                   std::span<const double> ratios) {
  std::vector<BBox> shapes;
  for (double s : scales) {
    for (double r : ratios) {
      const double w = s / std::sqrt(r);
      const double h = s * std::sqrt(r);
      shapes.push_back({-0.5 * w, -0.5 * h, 0.5 * w, 0.5 * h});
    }
  }
  std::vector<BBox> anchors;
  anchors.reserve(static_cast<std::size_t>(feat_h) * feat_w * shapes.size());
  for (int y = 0; y < feat_h; ++y) {
    for (int x = 0; x < feat_w; ++x) {
      const double cx = (x + 0.5) * stride;
      const double cy = (y + 0.5) * stride;
      for (const BBox& s : shapes) anchors.push_back(translate(s, cx, cy));
    }
  }
  return anchors;
}

}  // namespace wsod
