#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "wsod/geometry.hpp"
#include "wsod/labels.hpp"

namespace wsod {

// 8-bit grayscale raster, row-major.
struct GrayImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;

  GrayImage() = default;
  GrayImage(int w, int h, std::uint8_t fill = 0)
      : width(w), height(h), pixels(static_cast<std::size_t>(w) * h, fill) {}

  std::uint8_t at(int x, int y) const {
    return pixels[static_cast<std::size_t>(y) * width + x];
  }
  std::uint8_t& at(int x, int y) {
    return pixels[static_cast<std::size_t>(y) * width + x];
  }
  bool empty() const { return pixels.empty(); }

  friend bool operator==(const GrayImage&, const GrayImage&) = default;
};

struct RegionPrediction {
  BBox box;
  ProbTriple probs{1.0, 0.0, 0.0};
  double objectness = 0.0;

  double prob(RegionClass c) const { return probs[index_of(c)]; }
  // max(p_B, p_M), the score used for thresholding and NMS.
  double foreground_score() const;
  // Benign or Malignant, whichever is more probable (ties -> Benign).
  RegionClass foreground_class() const;

  friend bool operator==(const RegionPrediction&,
                         const RegionPrediction&) = default;
};

// Throws std::invalid_argument unless the triple is a distribution within
// 1e-6 and every component lies in [0,1].
void validate_probs(const ProbTriple& p);

struct StrongAnnotation {
  BBox moi_box;
  DiagnosisLabel moi_label = DiagnosisLabel::kBenign;
  std::vector<BBox> background_boxes;

  friend bool operator==(const StrongAnnotation&,
                         const StrongAnnotation&) = default;
};

struct WeakAnnotation {
  DiagnosisLabel label = DiagnosisLabel::kNormal;

  friend bool operator==(const WeakAnnotation&, const WeakAnnotation&) =
      default;
};

using Annotation = std::variant<StrongAnnotation, WeakAnnotation>;

enum class Split { kTrain, kTest };

std::string_view to_string(Split s);
Split parse_split(std::string_view s);

// Generator-side ground truth for synthetic images. Never used for training
// weakly annotated records; kept so pseudo labels and held-out metrics can be
// audited.
struct SyntheticTruth {
  DiagnosisLabel label = DiagnosisLabel::kNormal;
  std::optional<BBox> moi_box;
  std::vector<BBox> mass_boxes;

  friend bool operator==(const SyntheticTruth&, const SyntheticTruth&) =
      default;
};

struct ImageRecord {
  std::string id;
  std::string group;  // patient group; splits are disjoint by group
  Split split = Split::kTrain;
  std::string image_path;  // relative to the manifest directory
  GrayImage image;
  Annotation annotation;
  std::optional<SyntheticTruth> truth;

  bool is_strong() const {
    return std::holds_alternative<StrongAnnotation>(annotation);
  }
  bool is_weak() const {
    return std::holds_alternative<WeakAnnotation>(annotation);
  }
  const StrongAnnotation& strong() const {
    return std::get<StrongAnnotation>(annotation);
  }
  const WeakAnnotation& weak() const {
    return std::get<WeakAnnotation>(annotation);
  }
  DiagnosisLabel label() const;

  friend bool operator==(const ImageRecord&, const ImageRecord&) = default;
};

// Throws std::invalid_argument naming the record when a StrongAnnotation
// invariant is broken (label N, boxes outside the image, degenerate boxes).
void validate_strong(const StrongAnnotation& a, int width, int height,
                     const std::string& record_id);

}  // namespace wsod
