#pragma once

#include <array>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "wsod/box_coder.hpp"
#include "wsod/detector.hpp"
#include "wsod/records.hpp"

namespace wsod {

// ---------------------------------------------------------------------------
// Label assignment

enum class NegativeRule {
  kBackgroundBoxOverlap,  // over `background_overlap` of the box lies in an
                          // annotated background box
  kMaxIouBelow,           // IoU with every mass box below `negative_iou`
};

std::string_view to_string(NegativeRule r);
NegativeRule parse_negative_rule(std::string_view s);

struct AssignmentRule {
  double positive_iou = 0.7;
  NegativeRule negative = NegativeRule::kMaxIouBelow;
  double background_overlap = 0.7;
  double negative_iou = 0.3;
  // Also mark the highest-IoU box positive so that every MoI gets at least
  // one positive anchor. Off for the plain rule.
  bool best_match_positive = false;

  friend bool operator==(const AssignmentRule&, const AssignmentRule&) = default;
};

void validate(const AssignmentRule& r);

enum class AnchorLabel : signed char { kIgnore = -1, kNegative = 0, kPositive = 1 };

// Positive iff IoU with the MoI box exceeds rule.positive_iou; negative per
// the rule variant; everything else ignored. Positive wins over negative.
std::vector<AnchorLabel> assign_rpn_labels(std::span<const BBox> proposals,
                                           const StrongAnnotation& annotation,
                                           const AssignmentRule& rule);
std::vector<AnchorLabel> assign_rpn_labels(const ProposalSet& proposals,
                                           const StrongAnnotation& annotation,
                                           const AssignmentRule& rule);

// ROI-head labelling: IoU >= foreground_iou with the MoI takes the MoI
// class; background follows the rule variant (IoU below background_iou, or
// over rule.background_overlap inside a background box); else ignored (-1).
struct RoiAssignment {
  double foreground_iou = 0.5;
  double background_iou = 0.5;
};

inline constexpr int kIgnoreRoi = -1;

std::vector<int> assign_roi_classes(std::span<const BBox> rois,
                                    const StrongAnnotation& annotation,
                                    const AssignmentRule& rule,
                                    const RoiAssignment& roi_rule = {});

// ---------------------------------------------------------------------------
// Class weights

struct ClassWeights {
  std::array<double, kNumClasses> region{1.0, 1.0, 1.0};  // ROI classification
  std::array<double, kNumClasses> image{1.0, 1.0, 1.0};   // weak (MIL) loss
};

void validate(const ClassWeights& w);

// Inverse label frequency, normalized so the weights of the labels that occur
// average to 1. Labels that never occur get weight 1.
std::array<double, kNumClasses> inverse_frequency_weights(
    std::span<const DiagnosisLabel> labels);

// ---------------------------------------------------------------------------
// Strongly supervised loss

using Logits = std::array<double, kNumClasses>;

// Head outputs for one strongly annotated image. The `*_sampled` masks pick
// the anchors / ROIs that enter the loss (empty = all). Sampled entries
// whose assigned label is "ignore" still do not contribute.
struct StrongOutputs {
  std::span<const BBox> anchors;
  std::span<const double> rpn_logits;
  std::span<const Deltas> rpn_deltas;
  std::span<const char> rpn_sampled;
  std::span<const BBox> rois;
  std::span<const Logits> roi_logits;
  std::span<const ClassDeltas> roi_deltas;
  std::span<const char> roi_sampled;
};

struct StrongLoss {
  double rpn_cls = 0.0;
  double rpn_reg = 0.0;
  double frc_cls = 0.0;
  double frc_reg = 0.0;
  double total = 0.0;  // unweighted sum of the four terms

  // Gradients of `total` with respect to each output.
  std::vector<double> d_rpn_logits;
  std::vector<Deltas> d_rpn_deltas;
  std::vector<Logits> d_roi_logits;
  std::vector<ClassDeltas> d_roi_deltas;
};

// RPN: binary cross-entropy on sampled anchors plus smooth-L1 (beta 1/9) on
// positive anchors, both averaged over the sampled anchor count.
// ROI head: class-weighted softmax cross-entropy plus smooth-L1 (beta 1) on
// the MoI-class deltas of foreground ROIs, both averaged over the sampled ROI
// count. Regression targets come from the MoI box, the only annotated mass.
StrongLoss strong_loss(const StrongOutputs& outputs,
                       const StrongAnnotation& annotation,
                       const AssignmentRule& rule, const ClassWeights& weights,
                       const RoiAssignment& roi_rule = {});

inline constexpr double kRpnSmoothL1Beta = 1.0 / 9.0;
inline constexpr double kRoiSmoothL1Beta = 1.0;

double smooth_l1(double x, double beta);
double smooth_l1_grad(double x, double beta);

// ---------------------------------------------------------------------------
// Multiple-instance (image-level) loss

enum class MoICriterion {
  kMostBenign,          // argmax p_B
  kMostMalignant,       // argmax p_M
  kMostDiscriminative,  // argmax max(p_B, p_M)
  kMostAbnormal,        // argmin p_N
};

std::string_view to_string(MoICriterion c);
// Accepts "benign", "malignant", "discriminative", "abnormal".
MoICriterion parse_moi_criterion(std::string_view s);

// Criterion actually applied for an image: M images always use the most
// malignant region, B images use `benign_criterion`, N images the most
// abnormal region.
MoICriterion effective_criterion(DiagnosisLabel label,
                                 MoICriterion benign_criterion);

// Index chosen by `criterion` over a non-empty list; ties go to the lowest
// index.
std::size_t select_moi(std::span<const ProbTriple> probs,
                       MoICriterion criterion);

struct ImageLevelPrediction {
  ProbTriple probs{1.0, 0.0, 0.0};
  std::optional<std::size_t> moi;  // empty for the no-region fallback
};

// P_l(I) = p_l(x_MoI). An empty region list reads as a normal image
// (P = (1, 0, 0)) with no MoI.
ImageLevelPrediction image_level_prediction(
    std::span<const RegionPrediction> regions, DiagnosisLabel image_label,
    MoICriterion benign_criterion);
ImageLevelPrediction image_level_prediction(std::span<const ProbTriple> probs,
                                            DiagnosisLabel image_label,
                                            MoICriterion benign_criterion);

inline constexpr double kLogEpsilon = 1e-12;

struct MilLoss {
  double value = 0.0;
  std::optional<std::size_t> moi;
  ProbTriple probs{};    // P over {N, B, M}
  ProbTriple d_probs{};  // dL/dP, i.e. w.r.t. the MoI's probability triple
};

// loss = -w_label * log(max(P_label, eps)).
MilLoss mil_loss(std::span<const RegionPrediction> regions,
                 DiagnosisLabel image_label, MoICriterion benign_criterion,
                 const ClassWeights& weights);
MilLoss mil_loss(std::span<const ProbTriple> probs, DiagnosisLabel image_label,
                 MoICriterion benign_criterion, const ClassWeights& weights);

struct MilLogitLoss {
  double value = 0.0;
  std::optional<std::size_t> moi;
  std::vector<Logits> d_logits;  // non-zero only on the MoI row
};

// The same loss computed from ROI-head logits (softmax inside). The selection
// is treated as fixed, so only the selected row receives gradient.
MilLogitLoss mil_loss_from_logits(std::span<const Logits> logits,
                                  DiagnosisLabel image_label,
                                  MoICriterion benign_criterion,
                                  const ClassWeights& weights);

}  // namespace wsod
