#include "wsod/augment.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace wsod {
namespace {

double sample_pixel(const GrayImage& img, double x, double y) {
  // Bilinear with edge clamping; (x, y) in pixel-center coordinates.
  x = std::clamp(x, 0.0, img.width - 1.0);
  y = std::clamp(y, 0.0, img.height - 1.0);
  const int x0 = static_cast<int>(x);
  const int y0 = static_cast<int>(y);
  const int x1 = std::min(x0 + 1, img.width - 1);
  const int y1 = std::min(y0 + 1, img.height - 1);
  const double fx = x - x0;
  const double fy = y - y0;
  const double top = img.at(x0, y0) * (1 - fx) + img.at(x1, y0) * fx;
  const double bot = img.at(x0, y1) * (1 - fx) + img.at(x1, y1) * fx;
  return top * (1 - fy) + bot * fy;
}

std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 255.0)));
}

}  // namespace

AugmentationPolicy default_strong_policy() {
  AugmentationPolicy p;
  p.stream = Supervision::kStrong;
  p.horizontal_flip = true;
  p.brightness = 0.10;
  p.contrast = {0.9, 1.1};
  return p;
}

AugmentationPolicy default_weak_policy() {
  AugmentationPolicy p = default_strong_policy();
  p.stream = Supervision::kWeak;
  p.rotation_deg = 10.0;
  p.crop = {0.8, 1.0};
  return p;
}

AugmentationPolicy identity_policy(Supervision stream) {
  AugmentationPolicy p;
  p.stream = stream;
  return p;
}

void validate(const AugmentationPolicy& p) {
  if (p.brightness < 0.0 || p.brightness > 1.0) {
    throw std::invalid_argument("augmentation: brightness outside [0,1]");
  }
  if (!(p.contrast.lo > 0.0 && p.contrast.lo <= p.contrast.hi)) {
    throw std::invalid_argument("augmentation: bad contrast range");
  }
  if (p.rotation_deg < 0.0 || p.rotation_deg > 180.0) {
    throw std::invalid_argument("augmentation: rotation outside [0,180]");
  }
  if (!(p.crop.lo > 0.0 && p.crop.lo <= p.crop.hi && p.crop.hi <= 1.0)) {
    throw std::invalid_argument("augmentation: crop range outside (0,1]");
  }
  if (p.stream == Supervision::kStrong && p.rotates()) {
    throw std::invalid_argument(
        "augmentation: rotation is only allowed on the weak stream");
  }
}

ImageRecord flip_horizontal(const ImageRecord& record) {
  ImageRecord out = record;
  const GrayImage& src = record.image;
  for (int y = 0; y < src.height; ++y) {
    for (int x = 0; x < src.width; ++x) {
      out.image.at(x, y) = src.at(src.width - 1 - x, y);
    }
  }
  const double w = src.width;
  auto mirror = [w](const BBox& b) {
    return BBox{w - b.x_max, b.y_min, w - b.x_min, b.y_max};
  };
  if (out.is_strong()) {
    auto& a = std::get<StrongAnnotation>(out.annotation);
    a.moi_box = mirror(a.moi_box);
    for (auto& b : a.background_boxes) b = mirror(b);
  }
  return out;
}

std::optional<ImageRecord> central_crop(const ImageRecord& record,
                                        double fraction) {
  ImageRecord out = record;
  const GrayImage& src = record.image;
  const double cw = src.width * fraction;
  const double ch = src.height * fraction;
  const double x0 = 0.5 * (src.width - cw);
  const double y0 = 0.5 * (src.height - ch);
  const double sx = src.width / cw;
  const double sy = src.height / ch;

  auto map_box = [&](const BBox& b) -> std::optional<BBox> {
    BBox m{(b.x_min - x0) * sx, (b.y_min - y0) * sy, (b.x_max - x0) * sx,
           (b.y_max - y0) * sy};
    m = clip(m, src.width, src.height);
    if (!m.valid()) return std::nullopt;
    return m;
  };

  if (out.is_strong()) {
    auto& a = std::get<StrongAnnotation>(out.annotation);
    auto moi = map_box(a.moi_box);
    if (!moi) return std::nullopt;
    a.moi_box = *moi;
    std::vector<BBox> kept;
    for (const auto& b : a.background_boxes) {
      if (auto m = map_box(b)) kept.push_back(*m);
    }
    a.background_boxes = std::move(kept);
  }
  for (int y = 0; y < src.height; ++y) {
    for (int x = 0; x < src.width; ++x) {
      const double u = x0 + (x + 0.5) / sx - 0.5;
      const double v = y0 + (y + 0.5) / sy - 0.5;
      out.image.at(x, y) = to_byte(sample_pixel(src, u, v));
    }
  }
  return out;
}

ImageRecord rotate(const ImageRecord& record, double degrees) {
  if (record.is_strong()) {
    throw std::invalid_argument("rotate: strong records cannot be rotated");
  }
  ImageRecord out = record;
  const GrayImage& src = record.image;
  const double a = degrees * std::numbers::pi / 180.0;
  const double c = std::cos(a);
  const double s = std::sin(a);
  const double cx = 0.5 * (src.width - 1);
  const double cy = 0.5 * (src.height - 1);
  for (int y = 0; y < src.height; ++y) {
    for (int x = 0; x < src.width; ++x) {
      const double dx = x - cx;
      const double dy = y - cy;
      const double u = c * dx + s * dy + cx;
      const double v = -s * dx + c * dy + cy;
      out.image.at(x, y) = to_byte(sample_pixel(src, u, v));
    }
  }
  return out;
}

ImageRecord adjust_intensity(const ImageRecord& record, double brightness,
                             double contrast) {
  ImageRecord out = record;
  double mean = 0.0;
  for (auto p : record.image.pixels) mean += p;
  mean /= std::max<std::size_t>(1, record.image.pixels.size());
  for (auto& p : out.image.pixels) {
    p = to_byte((p - mean) * contrast + mean + brightness * 255.0);
  }
  return out;
}

ImageRecord augment(const ImageRecord& record, const AugmentationPolicy& policy,
                    Rng& rng) {
  validate(policy);
  const bool strong = record.is_strong();
  if (strong != (policy.stream == Supervision::kStrong)) {
    throw std::invalid_argument("augment: policy stream does not match record '" +
                                record.id + "'");
  }
  ImageRecord out = record;
  if (policy.horizontal_flip && uniform(rng, 0.0, 1.0) < 0.5) {
    out = flip_horizontal(out);
  }
  if (policy.brightness > 0.0 || policy.contrast.lo != 1.0 ||
      policy.contrast.hi != 1.0) {
    const double b = policy.brightness > 0.0
                         ? uniform(rng, -policy.brightness, policy.brightness)
                         : 0.0;
    const double c = policy.contrast.lo == policy.contrast.hi
                         ? policy.contrast.lo
                         : uniform(rng, policy.contrast.lo, policy.contrast.hi);
    out = adjust_intensity(out, b, c);
  }
  if (policy.rotates()) {
    out = rotate(out, uniform(rng, -policy.rotation_deg, policy.rotation_deg));
  }
  if (policy.crops()) {
    // Redraw until the MoI survives; fraction 1.0 always does.
    for (int attempt = 0;; ++attempt) {
      const double f = attempt < 32 ? uniform(rng, policy.crop.lo, policy.crop.hi)
                                    : 1.0;
      if (f >= 1.0) break;
      if (auto cropped = central_crop(out, f)) {
        out = std::move(*cropped);
        break;
      }
    }
  }
  return out;
}

}  // namespace wsod
