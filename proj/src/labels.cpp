#include "wsod/labels.hpp"

#include <stdexcept>
#include <string>

namespace wsod {

std::string_view to_string(DiagnosisLabel l) {
  switch (l) {
    case DiagnosisLabel::kNormal:
      return "N";
    case DiagnosisLabel::kBenign:
      return "B";
    case DiagnosisLabel::kMalignant:
      return "M";
  }
  return "?";
}

DiagnosisLabel parse_diagnosis(std::string_view s) {
  if (s == "N") return DiagnosisLabel::kNormal;
  if (s == "B") return DiagnosisLabel::kBenign;
  if (s == "M") return DiagnosisLabel::kMalignant;
  throw std::invalid_argument("unknown diagnosis label '" + std::string(s) +
                              "'");
}

std::string_view to_string(RegionClass c) {
  switch (c) {
    case RegionClass::kBackground:
      return "background";
    case RegionClass::kBenign:
      return "benign";
    case RegionClass::kMalignant:
      return "malignant";
  }
  return "?";
}

}  // namespace wsod
