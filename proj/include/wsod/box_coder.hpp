#pragma once

#include <array>
#include <span>
#include <vector>

#include "wsod/geometry.hpp"

namespace wsod {

// Center/log-size box parameterization:
//   dx = wx (cx' - cx) / w,  dy = wy (cy' - cy) / h,
//   dw = ww log(w' / w),     dh = wh log(h' / h).
using Deltas = std::array<double, 4>;
using DeltaWeights = std::array<double, 4>;

inline constexpr DeltaWeights kUnitDeltaWeights{1.0, 1.0, 1.0, 1.0};
// Fast R-CNN target normalization (stds 0.1, 0.1, 0.2, 0.2).
inline constexpr DeltaWeights kRoiDeltaWeights{10.0, 10.0, 5.0, 5.0};

Deltas encode_box(const BBox& reference, const BBox& target,
                  const DeltaWeights& weights = kUnitDeltaWeights);
BBox decode_box(const BBox& reference, const Deltas& deltas,
                const DeltaWeights& weights = kUnitDeltaWeights);

// Anchors centered on every feature cell, ordered (y, x, shape) with the
// shape index running over scales (outer) and ratios (inner). A scale is the
// side of the square anchor; ratio = height / width at constant area.
std::vector<BBox> generate_anchors(int feat_h, int feat_w, double stride,
                                   std::span<const double> scales,
                                   std::span<const double> ratios);

}  // namespace wsod
