#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <string_view>

namespace wsod {

// Image-level diagnosis: normal (no mass), benign, malignant.
enum class DiagnosisLabel { kNormal = 0, kBenign = 1, kMalignant = 2 };

// Region-level class. Background is read as "normal" when a region's
// probability triple is used as an image-level prediction.
enum class RegionClass { kBackground = 0, kBenign = 1, kMalignant = 2 };

inline constexpr std::size_t kNumClasses = 3;

// (p_N, p_B, p_M), indexed by the integer value of either enum above.
using ProbTriple = std::array<double, kNumClasses>;

constexpr std::size_t index_of(DiagnosisLabel l) {
  return static_cast<std::size_t>(l);
}
constexpr std::size_t index_of(RegionClass c) {
  return static_cast<std::size_t>(c);
}

constexpr RegionClass region_class_of(DiagnosisLabel l) {
  return static_cast<RegionClass>(static_cast<int>(l));
}

constexpr DiagnosisLabel diagnosis_from_index(std::size_t i) {
  return static_cast<DiagnosisLabel>(static_cast<int>(i));
}

// "N", "B", "M"
std::string_view to_string(DiagnosisLabel l);
// Throws std::invalid_argument on anything but N/B/M.
DiagnosisLabel parse_diagnosis(std::string_view s);

std::string_view to_string(RegionClass c);

}  // namespace wsod
