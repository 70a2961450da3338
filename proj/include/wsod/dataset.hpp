#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <tuple>
#include <vector>

#include "wsod/records.hpp"

namespace wsod {

enum class DataSource { kSynthetic, kExternal };

std::string_view to_string(DataSource s);

enum class Supervision { kStrong, kWeak };

struct DatasetManifest {
  DataSource source = DataSource::kSynthetic;
  std::vector<ImageRecord> records;

  using CountKey = std::tuple<Split, Supervision, DiagnosisLabel>;
  std::map<CountKey, std::size_t> counts() const;
  std::size_t count(Split split, Supervision sup) const;

  // Records filtered by split and supervision, copied.
  std::vector<ImageRecord> select(Split split, Supervision sup) const;

  friend bool operator==(const DatasetManifest&, const DatasetManifest&) =
      default;
};

// Throws std::invalid_argument if a patient group appears in both splits or
// a strong record breaks its annotation invariants.
void validate_manifest(const DatasetManifest& m);

struct Range {
  double lo = 0.0;
  double hi = 0.0;
};

// Per-class mass appearance. Irregularity is the relative amplitude of the
// boundary perturbation; orientation is the long-axis angle in degrees from
// the horizontal (0 = parallel to the skin line).
struct MassAppearance {
  Range irregularity;
  double orientation_mean_deg = 0.0;
  double orientation_std_deg = 0.0;
  Range boundary_blur;  // edge width in pixels
  Range contrast;       // darkening relative to the local background
};

struct SyntheticConfig {
  int image_size_min = 128;
  int image_size_max = 128;
  // mass_count_probs[k] = P(k+1 masses) for images with a mass.
  std::vector<double> mass_count_probs{0.8, 0.2};
  Range size_ratio{0.02, 0.10};  // mass box area / image area
  Range aspect{1.2, 1.8};
  MassAppearance benign{{0.0, 0.10}, 0.0, 18.0, {0.6, 1.4}, {0.45, 0.65}};
  MassAppearance malignant{{0.05, 0.28}, 90.0, 35.0, {1.2, 2.6},
                           {0.40, 0.60}};
  double speckle = 0.25;
  std::array<double, 3> class_mix{0.0, 0.5, 0.5};  // weak records, N/B/M
  int num_strong_train = 10;
  int num_weak_train = 0;
  int num_test = 0;
  int num_normal_test = 0;  // weakly annotated N images in the test split
  Range images_per_group{1, 3};
  Range background_boxes{1, 3};
  std::uint64_t seed = 0;
};

// Throws std::invalid_argument with a diagnostic on degenerate ranges,
// probabilities that do not sum to 1, or masses that cannot fit.
void validate(const SyntheticConfig& c);

// Deterministic in config.seed. Order: strong train, weak train, strong test,
// normal test.
DatasetManifest generate_synthetic(const SyntheticConfig& config);

// Renders one image with `label` (N means no mass). `gain` is the
// patient-level brightness shared by a group. Exposed for tests.
ImageRecord generate_record(const SyntheticConfig& config,
                            DiagnosisLabel label, Supervision sup,
                            std::uint64_t record_seed, double gain = 1.0);

}  // namespace wsod
