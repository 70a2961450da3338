#pragma once

// Random small loss instances shared by the unit and acceptance tests.

#include <vector>

#include "test_helpers.hpp"
#include "wsod/losses.hpp"

namespace testutil {

struct StrongInstance {
  std::vector<wsod::BBox> anchors;
  std::vector<double> rpn_logits;
  std::vector<wsod::Deltas> rpn_deltas;
  std::vector<char> rpn_mask;
  std::vector<wsod::BBox> rois;
  std::vector<wsod::Logits> roi_logits;
  std::vector<wsod::ClassDeltas> roi_deltas;
  std::vector<char> roi_mask;
  wsod::StrongAnnotation annotation;
  wsod::AssignmentRule rule;
  wsod::ClassWeights weights;

  wsod::StrongOutputs view() const {
    wsod::StrongOutputs o;
    o.anchors = anchors;
    o.rpn_logits = rpn_logits;
    o.rpn_deltas = rpn_deltas;
    o.rpn_sampled = rpn_mask;
    o.rois = rois;
    o.roi_logits = roi_logits;
    o.roi_deltas = roi_deltas;
    o.roi_sampled = roi_mask;
    return o;
  }
};

inline wsod::BBox jitter(const wsod::BBox& b, double amount, wsod::Rng& rng) {
  const double w = b.width(), h = b.height();
  wsod::BBox out{b.x_min + wsod::uniform(rng, -amount, amount) * w,
                 b.y_min + wsod::uniform(rng, -amount, amount) * h,
                 b.x_max + wsod::uniform(rng, -amount, amount) * w,
                 b.y_max + wsod::uniform(rng, -amount, amount) * h};
  if (!out.valid()) return b;
  return out;
}

// A mix of near-MoI boxes (positives / foreground), boxes inside background
// boxes and random boxes.
inline wsod::BBox candidate(const wsod::StrongAnnotation& a, wsod::Rng& rng) {
  const int kind = wsod::uniform_int(rng, 0, 2);
  if (kind == 0) return jitter(a.moi_box, 0.15, rng);
  if (kind == 1 && !a.background_boxes.empty()) {
    const auto& bg = a.background_boxes[wsod::uniform_int(
        rng, 0, static_cast<int>(a.background_boxes.size()) - 1)];
    return jitter(bg, 0.1, rng);
  }
  return random_box(rng, 100.0, 4.0, 40.0);
}

inline StrongInstance make_strong_instance(wsod::Rng& rng, int n_anchor = 6,
                                           int n_roi = 5, bool use_masks = true) {
  using namespace wsod;
  StrongInstance s;
  s.annotation.moi_box = random_box(rng, 100.0, 15.0, 40.0);
  s.annotation.moi_label = uniform(rng, 0, 1) < 0.5 ? DiagnosisLabel::kBenign
                                                    : DiagnosisLabel::kMalignant;
  const int n_bg = uniform_int(rng, 0, 2);
  for (int i = 0; i < n_bg; ++i) {
    s.annotation.background_boxes.push_back(random_box(rng, 100.0, 10.0, 30.0));
  }
  s.rule.negative = uniform(rng, 0, 1) < 0.5 ? NegativeRule::kMaxIouBelow
                                             : NegativeRule::kBackgroundBoxOverlap;
  for (auto& v : s.weights.region) v = uniform(rng, 0.5, 2.0);
  for (auto& v : s.weights.image) v = uniform(rng, 0.5, 2.0);
  for (int i = 0; i < n_anchor; ++i) {
    s.anchors.push_back(candidate(s.annotation, rng));
    s.rpn_logits.push_back(uniform(rng, -3, 3));
    Deltas d;
    for (auto& v : d) v = uniform(rng, -0.5, 0.5);
    s.rpn_deltas.push_back(d);
    s.rpn_mask.push_back(!use_masks || uniform(rng, 0, 1) < 0.8);
  }
  for (int i = 0; i < n_roi; ++i) {
    s.rois.push_back(candidate(s.annotation, rng));
    Logits z;
    for (auto& v : z) v = uniform(rng, -3, 3);
    s.roi_logits.push_back(z);
    ClassDeltas cd;
    for (auto& d : cd) {
      for (auto& v : d) v = uniform(rng, -2, 2);
    }
    s.roi_deltas.push_back(cd);
    s.roi_mask.push_back(!use_masks || uniform(rng, 0, 1) < 0.8);
  }
  return s;
}

inline std::vector<wsod::ProbTriple> random_region_set(wsod::Rng& rng, int n) {
  std::vector<wsod::ProbTriple> out;
  for (int i = 0; i < n; ++i) out.push_back(random_probs(rng));
  return out;
}

inline bool close_rel(double analytic, double numeric, double tol) {
  return std::abs(analytic - numeric) <=
         tol * std::max(std::abs(analytic), std::abs(numeric)) + 1e-9;
}

}  // namespace testutil
