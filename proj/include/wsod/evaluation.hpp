#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "wsod/detector.hpp"
#include "wsod/records.hpp"

namespace wsod {

// Regions of one image together with its ground truth. Depending on the
// producer `regions` holds raw ROI-head outputs or post-processed survivors.
struct DetectionResult {
  std::string image_id;
  std::vector<RegionPrediction> regions;
  Annotation ground_truth;

  friend bool operator==(const DetectionResult&,
                         const DetectionResult&) = default;
};

// Keeps regions whose foreground score max(p_B, p_M) exceeds
// `prob_threshold` (all regions at threshold 0), then applies class-agnostic
// NMS scored by the same value. nms_iou = 1 disables suppression.
std::vector<RegionPrediction> postprocess(
    std::span<const RegionPrediction> regions, double prob_threshold,
    double nms_iou);
DetectionResult postprocess(const DetectionResult& raw, double prob_threshold,
                            double nms_iou);

// An image is correct iff some region has probability > 0.5 for the GT class
// and IoU > 0.5 with the GT box. Weakly annotated images are rejected.
bool corloc_correct(const DetectionResult& result);
std::vector<int> corloc_indicators(std::span<const DetectionResult> results);
double corloc(std::span<const DetectionResult> results);

struct FrocPoint {
  double threshold = 0.0;
  double fp_per_image = 0.0;
  double sensitivity = 0.0;
};

// Uniform grid of `points` thresholds over [0, 1].
std::vector<double> froc_grid(int points = 101);

// For each threshold t the raw regions are post-processed at t. A survivor
// matches the image's lesion when its predicted foreground class equals the
// GT class and IoU > 0.5; matching is one-to-one, highest score first, and
// every unmatched survivor is a false positive. Normal (weak N) images
// contribute false positives only; FP/image averages over all images and
// sensitivity over the lesion-bearing ones.
std::vector<FrocPoint> froc(std::span<const DetectionResult> raw,
                            std::span<const double> thresholds, double nms_iou);

// Mean survivor count over images whose label is N. Any other image is
// rejected.
double fp_per_normal(std::span<const DetectionResult> results);

struct BootstrapReport {
  double estimate = 0.0;
  double low = 0.0;
  double high = 0.0;
  int resamples = 0;
  double level = 0.95;
  std::optional<double> p_value;
};

inline constexpr int kDefaultResamples = 2000;

// Percentile interval of the resampled means.
BootstrapReport bootstrap_ci(std::span<const int> indicators,
                             int resamples = kDefaultResamples,
                             double level = 0.95, std::uint64_t seed = 0);

// Two-sided paired t-test on the bootstrap distribution of the mean
// difference a - b: t = mean(d*) / sd(d*) with n - 1 degrees of freedom.
// Identical inputs give 1.
double paired_pvalue(std::span<const int> a, std::span<const int> b,
                     int resamples = kDefaultResamples, std::uint64_t seed = 0);

struct EvalOptions {
  double prob_threshold = 0.5;
  double nms_iou = 0.3;
  int froc_points = 101;
  int resamples = kDefaultResamples;
  double ci_level = 0.95;
  std::uint64_t bootstrap_seed = 0;

  friend bool operator==(const EvalOptions&, const EvalOptions&) = default;
};

void validate(const EvalOptions& o);

// Raw ROI-head outputs for every record, in record order.
std::vector<DetectionResult> detect(const Detector& model,
                                    std::span<const ImageRecord> records);

struct EvalReport {
  std::vector<std::string> image_ids;  // lesion-bearing images, in order
  std::vector<int> indicators;
  double corloc = 0.0;
  BootstrapReport corloc_ci;
  std::vector<FrocPoint> froc;
  std::optional<double> fp_per_normal;
  std::size_t num_images = 0;
  std::size_t num_normal = 0;
};

// CorLoc, CI, FROC and FP per normal image from raw detections. Strong
// records count towards CorLoc; weak N records towards FP per normal image.
EvalReport evaluate(std::span<const DetectionResult> raw,
                    const EvalOptions& options);

// Sensitivity against FP/image as an SVG line chart. Optional bands give a
// lower/upper sensitivity per point.
struct FrocCurve {
  std::string label;
  std::vector<FrocPoint> points;
  std::vector<double> band_low;
  std::vector<double> band_high;
};
void write_froc_svg(std::span<const FrocCurve> curves,
                    const std::filesystem::path& path);

}  // namespace wsod
