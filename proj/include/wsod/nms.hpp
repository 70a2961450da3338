#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "wsod/geometry.hpp"
#include "wsod/records.hpp"

namespace wsod {

// Greedy non-maximum suppression. Returns indices of the kept boxes in
// descending score order; equal scores keep input order. A box is suppressed
// when its IoU with an already kept box exceeds `iou_threshold`.
// `max_keep` = 0 means unlimited.
std::vector<std::size_t> nms_indices(std::span<const BBox> boxes,
                                     std::span<const double> scores,
                                     double iou_threshold,
                                     std::size_t max_keep = 0);

std::vector<RegionPrediction> nms(std::span<const RegionPrediction> regions,
                                  double iou_threshold,
                                  std::span<const double> scores);

}  // namespace wsod
