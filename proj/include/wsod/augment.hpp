#pragma once

#include <optional>

#include "wsod/dataset.hpp"
#include "wsod/rng.hpp"

namespace wsod {

struct AugmentationPolicy {
  Supervision stream = Supervision::kStrong;
  bool horizontal_flip = false;  // applied with probability 0.5
  double brightness = 0.0;       // additive delta drawn from [-b, b] (x255)
  Range contrast{1.0, 1.0};      // multiplicative factor around the mean
  double rotation_deg = 0.0;     // angle drawn from [-r, r]
  Range crop{1.0, 1.0};          // central crop side fraction

  bool rotates() const { return rotation_deg > 0.0; }
  bool crops() const { return crop.lo < 1.0; }
};

// Horizontal flip, brightness and contrast.
AugmentationPolicy default_strong_policy();
// The strong policy plus rotation and central cropping.
AugmentationPolicy default_weak_policy();
AugmentationPolicy identity_policy(Supervision stream);

// Throws std::invalid_argument on out-of-range parameters or a strong-stream
// policy that rotates (boxes cannot follow a rotation exactly).
void validate(const AugmentationPolicy& p);

// Applies the policy. Strong records get their boxes transformed with the
// pixels; a crop that removes the whole MoI is redrawn. Throws
// std::invalid_argument if the policy stream does not match the record.
ImageRecord augment(const ImageRecord& record, const AugmentationPolicy& policy,
                    Rng& rng);

// Individual transforms.
ImageRecord flip_horizontal(const ImageRecord& record);
// nullopt when the crop would remove the entire MoI of a strong record.
std::optional<ImageRecord> central_crop(const ImageRecord& record,
                                        double fraction);
ImageRecord rotate(const ImageRecord& record, double degrees);
ImageRecord adjust_intensity(const ImageRecord& record, double brightness,
                             double contrast);

}  // namespace wsod
