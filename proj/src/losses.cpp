#include "wsod/losses.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace wsod {

std::string_view to_string(NegativeRule r) {
  return r == NegativeRule::kBackgroundBoxOverlap ? "background_box_overlap"
                                                  : "max_iou_below";
}

NegativeRule parse_negative_rule(std::string_view s) {
  if (s == "background_box_overlap") return NegativeRule::kBackgroundBoxOverlap;
  if (s == "max_iou_below") return NegativeRule::kMaxIouBelow;
  throw std::invalid_argument("unknown negative rule '" + std::string(s) + "'");
}

void validate(const AssignmentRule& r) {
  for (double t : {r.positive_iou, r.background_overlap, r.negative_iou}) {
    if (!(t > 0.0 && t < 1.0)) {
      throw std::invalid_argument("assignment thresholds must lie in (0,1)");
    }
  }
}

std::vector<AnchorLabel> assign_rpn_labels(std::span<const BBox> proposals,
                                           const StrongAnnotation& annotation,
                                           const AssignmentRule& rule) {
  std::vector<AnchorLabel> labels(proposals.size(), AnchorLabel::kIgnore);
  double best = 0.0;
  for (std::size_t i = 0; i < proposals.size(); ++i) {
    const double o = iou(proposals[i], annotation.moi_box);
    best = std::max(best, o);
    if (rule.negative == NegativeRule::kMaxIouBelow) {
      if (o < rule.negative_iou) labels[i] = AnchorLabel::kNegative;
    } else {
      for (const BBox& bg : annotation.background_boxes) {
        if (overlap_fraction(proposals[i], bg) > rule.background_overlap) {
          labels[i] = AnchorLabel::kNegative;
          break;
        }
      }
    }
    if (o > rule.positive_iou) labels[i] = AnchorLabel::kPositive;
  }
  if (rule.best_match_positive && best > 0.0) {
    for (std::size_t i = 0; i < proposals.size(); ++i) {
      if (iou(proposals[i], annotation.moi_box) == best) {
        labels[i] = AnchorLabel::kPositive;
      }
    }
  }
  return labels;
}

std::vector<AnchorLabel> assign_rpn_labels(const ProposalSet& proposals,
                                           const StrongAnnotation& annotation,
                                           const AssignmentRule& rule) {
  const auto boxes = proposals.boxes();
  return assign_rpn_labels(std::span<const BBox>(boxes), annotation, rule);
}

std::vector<int> assign_roi_classes(std::span<const BBox> rois,
                                    const StrongAnnotation& annotation,
                                    const AssignmentRule& rule,
                                    const RoiAssignment& roi_rule) {
  std::vector<int> out(rois.size(), kIgnoreRoi);
  const int fg = static_cast<int>(index_of(annotation.moi_label));
  for (std::size_t i = 0; i < rois.size(); ++i) {
    const double o = iou(rois[i], annotation.moi_box);
    if (o >= roi_rule.foreground_iou) {
      out[i] = fg;
      continue;
    }
    if (rule.negative == NegativeRule::kMaxIouBelow) {
      if (o < roi_rule.background_iou) out[i] = 0;
    } else {
      for (const BBox& bg : annotation.background_boxes) {
        if (overlap_fraction(rois[i], bg) > rule.background_overlap) {
          out[i] = 0;
          break;
        }
      }
    }
  }
  return out;
}

void validate(const ClassWeights& w) {
  for (double v : w.region) {
    if (!(v > 0.0)) throw std::invalid_argument("class weights must be > 0");
  }
  for (double v : w.image) {
    if (!(v > 0.0)) throw std::invalid_argument("class weights must be > 0");
  }
}

std::array<double, kNumClasses> inverse_frequency_weights(
    std::span<const DiagnosisLabel> labels) {
  std::array<double, kNumClasses> count{};
  for (DiagnosisLabel l : labels) count[index_of(l)] += 1.0;
  std::array<double, kNumClasses> w{1.0, 1.0, 1.0};
  double sum = 0.0;
  int present = 0;
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    if (count[c] > 0.0) {
      w[c] = static_cast<double>(labels.size()) / count[c];
      sum += w[c];
      ++present;
    }
  }
  if (present == 0) return w;
  const double mean = sum / present;
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    if (count[c] > 0.0) w[c] /= mean;
  }
  return w;
}

double smooth_l1(double x, double beta) {
  const double a = std::abs(x);
  return a < beta ? 0.5 * x * x / beta : a - 0.5 * beta;
}

double smooth_l1_grad(double x, double beta) {
  if (std::abs(x) < beta) return x / beta;
  return x > 0.0 ? 1.0 : -1.0;
}

namespace {

// log(1 + exp(z)) without overflow.
double softplus(double z) {
  return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z)));
}

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

bool sampled(std::span<const char> mask, std::size_t i) {
  return mask.empty() || mask[i] != 0;
}

}  // namespace

StrongLoss strong_loss(const StrongOutputs& out,
                       const StrongAnnotation& annotation,
                       const AssignmentRule& rule, const ClassWeights& weights,
                       const RoiAssignment& roi_rule) {
  const std::size_t na = out.anchors.size();
  const std::size_t nr = out.rois.size();
  if (out.rpn_logits.size() != na || out.rpn_deltas.size() != na ||
      (!out.rpn_sampled.empty() && out.rpn_sampled.size() != na)) {
    throw std::invalid_argument("strong_loss: RPN output sizes differ");
  }
  if (out.roi_logits.size() != nr || out.roi_deltas.size() != nr ||
      (!out.roi_sampled.empty() && out.roi_sampled.size() != nr)) {
    throw std::invalid_argument("strong_loss: ROI output sizes differ");
  }

  StrongLoss L;
  L.d_rpn_logits.assign(na, 0.0);
  L.d_rpn_deltas.assign(na, Deltas{});
  L.d_roi_logits.assign(nr, Logits{});
  L.d_roi_deltas.assign(nr, ClassDeltas{});

  // RPN terms.
  const auto anchor_labels = assign_rpn_labels(out.anchors, annotation, rule);
  std::size_t n_rpn = 0;
  for (std::size_t a = 0; a < na; ++a) {
    if (sampled(out.rpn_sampled, a) && anchor_labels[a] != AnchorLabel::kIgnore) {
      ++n_rpn;
    }
  }
  if (n_rpn > 0) {
    const double inv = 1.0 / static_cast<double>(n_rpn);
    for (std::size_t a = 0; a < na; ++a) {
      if (!sampled(out.rpn_sampled, a) ||
          anchor_labels[a] == AnchorLabel::kIgnore) {
        continue;
      }
      const double y = anchor_labels[a] == AnchorLabel::kPositive ? 1.0 : 0.0;
      const double z = out.rpn_logits[a];
      L.rpn_cls += inv * (softplus(z) - y * z);
      L.d_rpn_logits[a] = inv * (sigmoid(z) - y);
      if (y == 1.0) {
        const Deltas t = encode_box(out.anchors[a], annotation.moi_box);
        for (int j = 0; j < 4; ++j) {
          const double diff = out.rpn_deltas[a][j] - t[j];
          L.rpn_reg += inv * smooth_l1(diff, kRpnSmoothL1Beta);
          L.d_rpn_deltas[a][j] = inv * smooth_l1_grad(diff, kRpnSmoothL1Beta);
        }
      }
    }
  }

  // ROI-head terms.
  const auto roi_labels =
      assign_roi_classes(out.rois, annotation, rule, roi_rule);
  std::size_t n_roi = 0;
  for (std::size_t i = 0; i < nr; ++i) {
    if (sampled(out.roi_sampled, i) && roi_labels[i] != kIgnoreRoi) ++n_roi;
  }
  if (n_roi > 0) {
    const double inv = 1.0 / static_cast<double>(n_roi);
    for (std::size_t i = 0; i < nr; ++i) {
      if (!sampled(out.roi_sampled, i) || roi_labels[i] == kIgnoreRoi) continue;
      const int c = roi_labels[i];
      const double w = weights.region[c];
      const auto p = softmax(out.roi_logits[i]);
      L.frc_cls += -inv * w * std::log(std::max(p[c], 1e-300));
      for (std::size_t k = 0; k < kNumClasses; ++k) {
        L.d_roi_logits[i][k] =
            inv * w * (p[k] - (static_cast<int>(k) == c ? 1.0 : 0.0));
      }
      if (c != 0) {
        const Deltas t =
            encode_box(out.rois[i], annotation.moi_box, kRoiDeltaWeights);
        for (int j = 0; j < 4; ++j) {
          const double diff = out.roi_deltas[i][c][j] - t[j];
          L.frc_reg += inv * smooth_l1(diff, kRoiSmoothL1Beta);
          L.d_roi_deltas[i][c][j] = inv * smooth_l1_grad(diff, kRoiSmoothL1Beta);
        }
      }
    }
  }

  L.total = L.rpn_cls + L.rpn_reg + L.frc_cls + L.frc_reg;
  return L;
}

std::string_view to_string(MoICriterion c) {
  switch (c) {
    case MoICriterion::kMostBenign:
      return "benign";
    case MoICriterion::kMostMalignant:
      return "malignant";
    case MoICriterion::kMostDiscriminative:
      return "discriminative";
    case MoICriterion::kMostAbnormal:
      return "abnormal";
  }
  return "?";
}

MoICriterion parse_moi_criterion(std::string_view s) {
  if (s == "benign" || s == "most_benign") return MoICriterion::kMostBenign;
  if (s == "malignant" || s == "most_malignant") {
    return MoICriterion::kMostMalignant;
  }
  if (s == "discriminative" || s == "most_discriminative") {
    return MoICriterion::kMostDiscriminative;
  }
  if (s == "abnormal" || s == "most_abnormal") return MoICriterion::kMostAbnormal;
  throw std::invalid_argument("unknown MoI criterion '" + std::string(s) + "'");
}

MoICriterion effective_criterion(DiagnosisLabel label,
                                 MoICriterion benign_criterion) {
  switch (label) {
    case DiagnosisLabel::kMalignant:
      return MoICriterion::kMostMalignant;
    case DiagnosisLabel::kBenign:
      return benign_criterion;
    case DiagnosisLabel::kNormal:
      return MoICriterion::kMostAbnormal;
  }
  return benign_criterion;
}

std::size_t select_moi(std::span<const ProbTriple> probs,
                       MoICriterion criterion) {
  if (probs.empty()) throw std::invalid_argument("select_moi: no regions");
  auto score = [criterion](const ProbTriple& p) {
    switch (criterion) {
      case MoICriterion::kMostBenign:
        return p[1];
      case MoICriterion::kMostMalignant:
        return p[2];
      case MoICriterion::kMostDiscriminative:
        return std::max(p[1], p[2]);
      case MoICriterion::kMostAbnormal:
        return -p[0];
    }
    return 0.0;
  };
  std::size_t best = 0;
  double best_score = score(probs[0]);
  for (std::size_t i = 1; i < probs.size(); ++i) {
    const double s = score(probs[i]);
    if (s > best_score) {
      best = i;
      best_score = s;
    }
  }
  return best;
}

ImageLevelPrediction image_level_prediction(std::span<const ProbTriple> probs,
                                            DiagnosisLabel image_label,
                                            MoICriterion benign_criterion) {
  ImageLevelPrediction out;
  if (probs.empty()) return out;
  const std::size_t i =
      select_moi(probs, effective_criterion(image_label, benign_criterion));
  out.moi = i;
  out.probs = probs[i];
  return out;
}

ImageLevelPrediction image_level_prediction(
    std::span<const RegionPrediction> regions, DiagnosisLabel image_label,
    MoICriterion benign_criterion) {
  std::vector<ProbTriple> probs;
  probs.reserve(regions.size());
  for (const auto& r : regions) probs.push_back(r.probs);
  return image_level_prediction(std::span<const ProbTriple>(probs), image_label,
                                benign_criterion);
}

MilLoss mil_loss(std::span<const ProbTriple> probs, DiagnosisLabel image_label,
                 MoICriterion benign_criterion, const ClassWeights& weights) {
  const auto pred = image_level_prediction(probs, image_label, benign_criterion);
  const std::size_t l = index_of(image_label);
  const double w = weights.image[l];
  MilLoss out;
  out.moi = pred.moi;
  out.probs = pred.probs;
  const double p = pred.probs[l];
  out.value = -w * std::log(std::max(p, kLogEpsilon));
  if (pred.moi && p > kLogEpsilon) out.d_probs[l] = -w / p;
  return out;
}

MilLoss mil_loss(std::span<const RegionPrediction> regions,
                 DiagnosisLabel image_label, MoICriterion benign_criterion,
                 const ClassWeights& weights) {
  std::vector<ProbTriple> probs;
  probs.reserve(regions.size());
  for (const auto& r : regions) probs.push_back(r.probs);
  return mil_loss(std::span<const ProbTriple>(probs), image_label,
                  benign_criterion, weights);
}

MilLogitLoss mil_loss_from_logits(std::span<const Logits> logits,
                                  DiagnosisLabel image_label,
                                  MoICriterion benign_criterion,
                                  const ClassWeights& weights) {
  std::vector<ProbTriple> probs;
  probs.reserve(logits.size());
  for (const auto& z : logits) probs.push_back(softmax(z));
  const MilLoss base = mil_loss(std::span<const ProbTriple>(probs), image_label,
                                benign_criterion, weights);
  MilLogitLoss out;
  out.value = base.value;
  out.moi = base.moi;
  out.d_logits.assign(logits.size(), Logits{});
  if (!base.moi) return out;
  const std::size_t l = index_of(image_label);
  const ProbTriple& p = probs[*base.moi];
  if (p[l] <= kLogEpsilon) return out;  // clamped: flat
  const double w = weights.image[l];
  for (std::size_t k = 0; k < kNumClasses; ++k) {
    out.d_logits[*base.moi][k] = w * (p[k] - (k == l ? 1.0 : 0.0));
  }
  return out;
}

}  // namespace wsod
