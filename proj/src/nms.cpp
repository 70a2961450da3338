#include "wsod/nms.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

namespace wsod {

std::vector<std::size_t> nms_indices(std::span<const BBox> boxes,
                                     std::span<const double> scores,
                                     double iou_threshold,
                                     std::size_t max_keep) {
  if (boxes.size() != scores.size()) {
    throw std::invalid_argument("nms: boxes and scores differ in length");
  }
  std::vector<std::size_t> order(boxes.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a,
                                                   std::size_t b) {
    return scores[a] > scores[b];
  });

  std::vector<std::size_t> keep;
  std::vector<char> suppressed(boxes.size(), 0);
  for (std::size_t i = 0; i < order.size(); ++i) {
    const std::size_t cur = order[i];
    if (suppressed[cur]) continue;
    keep.push_back(cur);
    if (max_keep != 0 && keep.size() == max_keep) break;
    for (std::size_t j = i + 1; j < order.size(); ++j) {
      const std::size_t other = order[j];
      if (!suppressed[other] && iou(boxes[cur], boxes[other]) > iou_threshold) {
        suppressed[other] = 1;
      }
    }
  }
  return keep;
}

std::vector<RegionPrediction> nms(std::span<const RegionPrediction> regions,
                                  double iou_threshold,
                                  std::span<const double> scores) {
  std::vector<BBox> boxes;
  boxes.reserve(regions.size());
  for (const auto& r : regions) boxes.push_back(r.box);
  std::vector<RegionPrediction> out;
  for (std::size_t i : nms_indices(boxes, scores, iou_threshold)) {
    out.push_back(regions[i]);
  }
  return out;
}

}  // namespace wsod
