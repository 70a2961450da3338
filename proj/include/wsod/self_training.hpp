#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "wsod/dataset.hpp"
#include "wsod/detector.hpp"
#include "wsod/evaluation.hpp"
#include "wsod/training.hpp"

namespace wsod {

struct PromotionConfig {
  double fraction = 0.5;      // of the weak set, in (0,1)
  int background_boxes = 2;   // pseudo background boxes per promoted image
  int max_attempts = 100;     // rejection-sampling budget per image
  double prob_threshold = 0.5;
  double nms_iou = 0.3;
  int rounds = 1;
  // Iterations for each retraining run; 0 reuses the training config's.
  int retrain_iterations = 0;
  std::uint64_t seed = 0;

  friend bool operator==(const PromotionConfig&,
                         const PromotionConfig&) = default;
};

void validate(const PromotionConfig& c);

struct PromotionEntry {
  std::string id;
  DiagnosisLabel label = DiagnosisLabel::kNormal;
  // Probability of the image label at the pseudo MoI; absent when the image
  // cannot be promoted (label N or no detection).
  std::optional<double> confidence;
  bool promoted = false;
  std::optional<BBox> pseudo_box;
  std::vector<BBox> background_boxes;
};

struct PromotionResult {
  std::vector<ImageRecord> promoted;   // now strongly annotated
  std::vector<ImageRecord> remaining;  // still weak, input order
  std::vector<PromotionEntry> ranking; // all weak images, best first
};

// Scores every weak image by the post-processed MoI's probability for its
// label (most benign region for B, most malignant for M), promotes the top
// floor(fraction * n) eligible ones with that region as pseudo MoI box and
// samples pseudo background boxes with IoU 0 against every retained
// detection. Ties keep input order.
PromotionResult promote(const Detector& model,
                        std::span<const ImageRecord> weak,
                        const PromotionConfig& config);

// floor(fraction * n).
std::size_t promotion_quota(double fraction, std::size_t n);

// Ranking order used by promote(): eligible images by descending confidence,
// then ineligible ones, ties by input position.
std::vector<std::size_t> promotion_order(
    std::span<const std::optional<double>> confidence);

struct SelfTrainResult {
  Detector initial;
  Detector retrained;
  TrainState initial_state;
  TrainState retrained_state;
  std::vector<PromotionResult> rounds;
  std::optional<EvalReport> initial_eval;    // on the test split, if any
  std::optional<EvalReport> retrained_eval;
};

// train -> promote -> retrain (from a fresh initialization with the same
// seed) for config.rounds rounds. `initial` skips the first training.
SelfTrainResult self_train(const DatasetManifest& manifest,
                           const DetectorConfig& detector_config,
                           const TrainConfig& train_config,
                           const PromotionConfig& promotion_config,
                           const EvalOptions& eval_options,
                           const Detector* initial = nullptr);

// One JSON object per line: id, label, confidence, promoted, pseudo box,
// background boxes.
void write_promotion_report(const PromotionResult& result,
                            const std::filesystem::path& path);

}  // namespace wsod
