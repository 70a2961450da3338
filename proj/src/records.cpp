#include "wsod/records.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace wsod {

double RegionPrediction::foreground_score() const {
  return std::max(probs[1], probs[2]);
}

RegionClass RegionPrediction::foreground_class() const {
  return probs[2] > probs[1] ? RegionClass::kMalignant : RegionClass::kBenign;
}

void validate_probs(const ProbTriple& p) {
  double sum = 0.0;
  for (double v : p) {
    if (!(v >= 0.0 && v <= 1.0)) {
      throw std::invalid_argument("probability component outside [0,1]");
    }
    sum += v;
  }
  if (std::abs(sum - 1.0) > 1e-6) {
    throw std::invalid_argument("probability triple does not sum to 1");
  }
}

std::string_view to_string(Split s) {
  return s == Split::kTrain ? "train" : "test";
}

Split parse_split(std::string_view s) {
  if (s == "train") return Split::kTrain;
  if (s == "test") return Split::kTest;
  throw std::invalid_argument("unknown split '" + std::string(s) + "'");
}

DiagnosisLabel ImageRecord::label() const {
  return is_strong() ? strong().moi_label : weak().label;
}

void validate_strong(const StrongAnnotation& a, int width, int height,
                     const std::string& record_id) {
  auto fail = [&](const std::string& what) {
    throw std::invalid_argument("record '" + record_id + "': " + what);
  };
  if (a.moi_label == DiagnosisLabel::kNormal) {
    fail("strong annotation with MoI label N");
  }
  if (!a.moi_box.valid()) fail("degenerate MoI box " + to_string(a.moi_box));
  if (!inside_image(a.moi_box, width, height)) {
    fail("MoI box " + to_string(a.moi_box) + " outside the image");
  }
  for (const BBox& b : a.background_boxes) {
    if (!b.valid()) fail("degenerate background box " + to_string(b));
    if (!inside_image(b, width, height)) {
      fail("background box " + to_string(b) + " outside the image");
    }
  }
}

}  // namespace wsod
