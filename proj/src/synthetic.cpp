#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>

#include "wsod/dataset.hpp"
#include "wsod/rng.hpp"

namespace wsod {
namespace {

struct Harmonic {
  int order;
  double amplitude;
  double phase;
};

struct MassShape {
  double cx, cy;      // center
  double semi_major;  // along `angle`
  double semi_minor;
  double angle;  // radians
  std::vector<Harmonic> boundary;
  double blur;
  double contrast;
  double irregularity;
  DiagnosisLabel label;

  double radius_at(double phi) const {
    double r = 1.0;
    for (const auto& h : boundary) {
      r += h.amplitude * std::cos(h.order * phi + h.phase);
    }
    return std::max(r, 0.45);
  }

  double max_extent() const {
    double s = 1.0;
    for (const auto& h : boundary) s += std::abs(h.amplitude);
    return semi_major * s + 2.0 * blur + 1.0;
  }

  // Normalized polar coordinates of pixel center (x, y) in the mass frame.
  void polar(double x, double y, double& rho, double& phi) const {
    const double dx = x - cx;
    const double dy = y - cy;
    const double c = std::cos(angle);
    const double s = std::sin(angle);
    const double u = (c * dx + s * dy) / semi_major;
    const double v = (-s * dx + c * dy) / semi_minor;
    rho = std::hypot(u, v);
    phi = std::atan2(v, u);
  }

  // Soft membership in [0,1] and the hard inside test.
  double membership(double x, double y, bool* inside) const {
    double rho, phi;
    polar(x, y, rho, phi);
    const double r = radius_at(phi);
    if (inside) *inside = rho < r;
    const double dist = (r - rho) * std::sqrt(semi_major * semi_minor);
    return 1.0 / (1.0 + std::exp(-dist * 2.0 / blur));
  }

  // Scalar malignancy look used to pick the MoI among benign masses.
  double look_score() const {
    return irregularity / 0.3 + std::abs(std::sin(angle));
  }
};

double sample(Rng& rng, const Range& r) {
  return r.lo == r.hi ? r.lo : uniform(rng, r.lo, r.hi);
}

int sample_count(Rng& rng, const std::vector<double>& probs) {
  const double u = uniform(rng, 0.0, 1.0);
  double acc = 0.0;
  for (std::size_t k = 0; k < probs.size(); ++k) {
    acc += probs[k];
    if (u < acc) return static_cast<int>(k) + 1;
  }
  return static_cast<int>(probs.size());
}

MassShape sample_shape(const SyntheticConfig& cfg, DiagnosisLabel label,
                       int width, int height, Rng& rng) {
  const MassAppearance& look =
      label == DiagnosisLabel::kMalignant ? cfg.malignant : cfg.benign;
  MassShape m;
  m.label = label;
  const double area = sample(rng, cfg.size_ratio) * width * height;
  const double aspect = sample(rng, cfg.aspect);
  m.semi_minor = std::sqrt(area / (4.0 * aspect));
  m.semi_major = aspect * m.semi_minor;
  std::normal_distribution<double> orient(look.orientation_mean_deg,
                                          look.orientation_std_deg);
  m.angle = orient(rng) * std::numbers::pi / 180.0;
  m.irregularity = sample(rng, look.irregularity);
  // Gentle lobulation plus higher-order spiculation, both scaled by the
  // irregularity draw.
  m.boundary.push_back({uniform_int(rng, 2, 4), 0.35 * m.irregularity,
                        uniform(rng, 0.0, 2.0 * std::numbers::pi)});
  m.boundary.push_back({uniform_int(rng, 7, 11), m.irregularity,
                        uniform(rng, 0.0, 2.0 * std::numbers::pi)});
  m.blur = sample(rng, look.boundary_blur);
  m.contrast = sample(rng, look.contrast);
  const double ext = m.max_extent();
  m.cx = uniform(rng, ext, std::max(ext + 1e-3, width - ext));
  m.cy = uniform(rng, ext, std::max(ext + 1e-3, height - ext));
  return m;
}

// Tight box around pixels whose centers fall inside the hard boundary.
std::optional<BBox> mask_box(const MassShape& m, int width, int height) {
  const double ext = m.max_extent();
  const int x0 = std::max(0, static_cast<int>(std::floor(m.cx - ext)));
  const int x1 = std::min(width - 1, static_cast<int>(std::ceil(m.cx + ext)));
  const int y0 = std::max(0, static_cast<int>(std::floor(m.cy - ext)));
  const int y1 = std::min(height - 1, static_cast<int>(std::ceil(m.cy + ext)));
  int bx0 = width, by0 = height, bx1 = -1, by1 = -1;
  for (int y = y0; y <= y1; ++y) {
    for (int x = x0; x <= x1; ++x) {
      bool inside = false;
      m.membership(x + 0.5, y + 0.5, &inside);
      if (inside) {
        bx0 = std::min(bx0, x);
        by0 = std::min(by0, y);
        bx1 = std::max(bx1, x);
        by1 = std::max(by1, y);
      }
    }
  }
  if (bx1 < 0) return std::nullopt;
  return BBox{static_cast<double>(bx0), static_cast<double>(by0),
              static_cast<double>(bx1 + 1), static_cast<double>(by1 + 1)};
}

BBox grow(const BBox& b, double margin) {
  return {b.x_min - margin, b.y_min - margin, b.x_max + margin,
          b.y_max + margin};
}

void check_range(const Range& r, const char* name, bool positive) {
  if (!(r.lo <= r.hi) || (positive && r.lo <= 0.0)) {
    throw std::invalid_argument(std::string("synthetic config: range '") +
                                name + "' is degenerate");
  }
}

void check_distribution(std::span<const double> p, const char* name) {
  double sum = 0.0;
  for (double v : p) {
    if (v < 0.0) {
      throw std::invalid_argument(std::string("synthetic config: '") + name +
                                  "' has a negative probability");
    }
    sum += v;
  }
  if (std::abs(sum - 1.0) > 1e-9) {
    throw std::invalid_argument(std::string("synthetic config: '") + name +
                                "' does not sum to 1");
  }
}

std::string numbered(const char* prefix, int i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%s%05d", prefix, i);
  return buf;
}

}  // namespace

std::string_view to_string(DataSource s) {
  return s == DataSource::kSynthetic ? "synthetic" : "external";
}

void validate(const SyntheticConfig& c) {
  if (c.image_size_min < 16 || c.image_size_min > c.image_size_max) {
    throw std::invalid_argument(
        "synthetic config: image size range is degenerate");
  }
  check_range(c.size_ratio, "size_ratio", true);
  check_range(c.aspect, "aspect", true);
  for (const MassAppearance* a : {&c.benign, &c.malignant}) {
    check_range(a->irregularity, "irregularity", false);
    check_range(a->boundary_blur, "boundary_blur", true);
    check_range(a->contrast, "contrast", true);
    if (a->irregularity.hi >= 0.5) {
      throw std::invalid_argument(
          "synthetic config: irregularity must stay below 0.5");
    }
    if (a->contrast.hi > 1.0) {
      throw std::invalid_argument("synthetic config: contrast above 1");
    }
  }
  check_range(c.images_per_group, "images_per_group", true);
  check_range(c.background_boxes, "background_boxes", false);
  if (c.size_ratio.hi >= 1.0) {
    throw std::invalid_argument("synthetic config: mass larger than image");
  }
  if (c.mass_count_probs.empty()) {
    throw std::invalid_argument("synthetic config: empty mass count table");
  }
  check_distribution(c.mass_count_probs, "mass_count_probs");
  check_distribution(c.class_mix, "class_mix");
  if (c.speckle < 0.0) {
    throw std::invalid_argument("synthetic config: negative speckle level");
  }
  if (c.num_strong_train < 0 || c.num_weak_train < 0 || c.num_test < 0 ||
      c.num_normal_test < 0) {
    throw std::invalid_argument("synthetic config: negative record count");
  }
  if ((c.num_strong_train > 0 || c.num_test > 0) &&
      c.class_mix[1] + c.class_mix[2] <= 0.0) {
    throw std::invalid_argument(
        "synthetic config: strong records need a B or M share in class_mix");
  }
  // Worst case: largest area, most elongated, most irregular mass placed in
  // the smallest image, for every mass of the largest count at once.
  const double max_irr =
      std::max(c.benign.irregularity.hi, c.malignant.irregularity.hi);
  const double side = c.image_size_min;
  const double minor = std::sqrt(c.size_ratio.hi * side * side /
                                 (4.0 * c.aspect.lo));
  const double major = c.aspect.hi * std::sqrt(c.size_ratio.hi * side * side /
                                               (4.0 * c.aspect.hi));
  const double extent = std::max(major, minor) * (1.0 + 1.35 * max_irr);
  if (2.0 * extent + 4.0 > side) {
    throw std::invalid_argument(
        "synthetic config: mass larger than image (extent " +
        std::to_string(2.0 * extent) + " px vs image " +
        std::to_string(c.image_size_min) + " px)");
  }
  const double total_ratio =
      c.size_ratio.hi * static_cast<double>(c.mass_count_probs.size());
  if (total_ratio > 0.6) {
    throw std::invalid_argument(
        "synthetic config: masses cannot fit side by side in the image");
  }
}

ImageRecord generate_record(const SyntheticConfig& cfg, DiagnosisLabel label,
                            Supervision sup, std::uint64_t record_seed,
                            double gain) {
  Rng rng(record_seed);
  const int size = uniform_int(rng, cfg.image_size_min, cfg.image_size_max);
  const int width = size;
  const int height = size;

  // Background: tissue layering plus a few smooth bumps.
  std::vector<double> img(static_cast<std::size_t>(width) * height);
  const double period = uniform(rng, height / 6.0, height / 3.0);
  const double phase = uniform(rng, 0.0, 2.0 * std::numbers::pi);
  struct Bump {
    double x, y, s, a;
  };
  std::vector<Bump> bumps;
  for (int i = 0; i < 3; ++i) {
    bumps.push_back({uniform(rng, 0.0, width), uniform(rng, 0.0, height),
                     uniform(rng, width / 5.0, width / 2.0),
                     uniform(rng, -0.08, 0.08)});
  }
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      double v = 0.55 + 0.04 * std::sin(2.0 * std::numbers::pi * y / period +
                                        phase);
      for (const auto& b : bumps) {
        const double d2 = (x - b.x) * (x - b.x) + (y - b.y) * (y - b.y);
        v += b.a * std::exp(-d2 / (2.0 * b.s * b.s));
      }
      img[static_cast<std::size_t>(y) * width + x] = v * gain;
    }
  }

  // Masses: one malignant mass for M images, the rest benign.
  std::vector<MassShape> masses;
  std::vector<BBox> boxes;
  if (label != DiagnosisLabel::kNormal) {
    const int count = sample_count(rng, cfg.mass_count_probs);
    for (int k = 0; k < count; ++k) {
      const DiagnosisLabel mass_label =
          (label == DiagnosisLabel::kMalignant && k == 0)
              ? DiagnosisLabel::kMalignant
              : DiagnosisLabel::kBenign;
      bool placed = false;
      for (int attempt = 0; attempt < 200 && !placed; ++attempt) {
        MassShape m = sample_shape(cfg, mass_label, width, height, rng);
        auto box = mask_box(m, width, height);
        if (!box || box->x_min < 1 || box->y_min < 1 ||
            box->x_max > width - 1 || box->y_max > height - 1) {
          continue;
        }
        bool clear = true;
        for (const BBox& other : boxes) {
          if (intersection_area(grow(*box, 2.0), other) > 0.0) clear = false;
        }
        if (!clear) continue;
        masses.push_back(std::move(m));
        boxes.push_back(*box);
        placed = true;
      }
      if (!placed && k == 0) {
        throw std::invalid_argument(
            "synthetic config: could not place a mass inside the image");
      }
    }
  }

  for (std::size_t k = 0; k < masses.size(); ++k) {
    const MassShape& m = masses[k];
    const BBox win = grow(boxes[k], 3.0 * m.blur + 2.0);
    const int x0 = std::max(0, static_cast<int>(win.x_min));
    const int y0 = std::max(0, static_cast<int>(win.y_min));
    const int x1 = std::min(width, static_cast<int>(std::ceil(win.x_max)));
    const int y1 = std::min(height, static_cast<int>(std::ceil(win.y_max)));
    for (int y = y0; y < y1; ++y) {
      for (int x = x0; x < x1; ++x) {
        const double mem = m.membership(x + 0.5, y + 0.5, nullptr);
        img[static_cast<std::size_t>(y) * width + x] *= 1.0 - m.contrast * mem;
      }
    }
  }

  ImageRecord rec;
  rec.image = GrayImage(width, height);
  std::normal_distribution<double> noise(0.0, 1.0);
  for (std::size_t i = 0; i < img.size(); ++i) {
    const double n = noise(rng);
    const double v =
        img[i] * std::exp(cfg.speckle * n - 0.5 * cfg.speckle * cfg.speckle);
    rec.image.pixels[i] =
        static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
  }

  SyntheticTruth truth;
  truth.label = label;
  truth.mass_boxes = boxes;
  std::size_t moi = 0;
  if (!masses.empty()) {
    if (label == DiagnosisLabel::kBenign) {
      for (std::size_t k = 1; k < masses.size(); ++k) {
        if (masses[k].look_score() > masses[moi].look_score()) moi = k;
      }
    }
    truth.moi_box = boxes[moi];
  }

  if (sup == Supervision::kStrong) {
    if (label == DiagnosisLabel::kNormal) {
      throw std::invalid_argument("strong records cannot be labeled N");
    }
    StrongAnnotation a;
    a.moi_box = boxes[moi];
    a.moi_label = label;
    const int n_bg = static_cast<int>(std::lround(sample(rng, cfg.background_boxes)));
    const double lo = std::sqrt(cfg.size_ratio.lo * width * height) * 0.8;
    const double hi = std::sqrt(cfg.size_ratio.hi * width * height) * 1.2;
    for (int b = 0; b < n_bg; ++b) {
      for (int attempt = 0; attempt < 100; ++attempt) {
        const double w = uniform(rng, lo, hi);
        const double h = uniform(rng, lo, hi);
        if (w >= width || h >= height) continue;
        const double x = uniform(rng, 0.0, width - w);
        const double y = uniform(rng, 0.0, height - h);
        const BBox cand{x, y, x + w, y + h};
        bool clear = true;
        for (const BBox& mb : boxes) {
          if (iou(cand, mb) > 0.0) clear = false;
        }
        if (clear) {
          a.background_boxes.push_back(cand);
          break;
        }
      }
    }
    rec.annotation = std::move(a);
  } else {
    rec.annotation = WeakAnnotation{label};
  }
  rec.truth = std::move(truth);
  return rec;
}

DatasetManifest generate_synthetic(const SyntheticConfig& config) {
  validate(config);
  DatasetManifest m;
  m.source = DataSource::kSynthetic;

  struct Segment {
    const char* prefix;
    int count;
    Split split;
    Supervision sup;
    bool normal_only;
  };
  const Segment segments[] = {
      {"s", config.num_strong_train, Split::kTrain, Supervision::kStrong, false},
      {"w", config.num_weak_train, Split::kTrain, Supervision::kWeak, false},
      {"t", config.num_test, Split::kTest, Supervision::kStrong, false},
      {"n", config.num_normal_test, Split::kTest, Supervision::kWeak, true},
  };

  const double bm = config.class_mix[1] + config.class_mix[2];
  int group_counter[2] = {0, 0};
  for (std::uint64_t seg = 0; seg < 4; ++seg) {
    const Segment& s = segments[seg];
    Rng group_rng = make_rng(config.seed, {seg, 0x67726f7570});
    int remaining_in_group = 0;
    std::string group;
    double gain = 1.0;
    for (int i = 0; i < s.count; ++i) {
      if (remaining_in_group == 0) {
        remaining_in_group = static_cast<int>(std::lround(
            uniform(group_rng, config.images_per_group.lo,
                    config.images_per_group.hi)));
        remaining_in_group = std::max(1, remaining_in_group);
        gain = uniform(group_rng, 0.85, 1.15);
        const int split_idx = s.split == Split::kTrain ? 0 : 1;
        group = std::string(to_string(s.split)) + "_" +
                numbered("g", group_counter[split_idx]++);
      }
      --remaining_in_group;

      Rng label_rng = make_rng(config.seed, {seg, static_cast<std::uint64_t>(i)});
      DiagnosisLabel label = DiagnosisLabel::kNormal;
      const double u = uniform(label_rng, 0.0, 1.0);
      if (s.normal_only) {
        label = DiagnosisLabel::kNormal;
      } else if (s.sup == Supervision::kStrong) {
        label = u * bm < config.class_mix[1] ? DiagnosisLabel::kBenign
                                             : DiagnosisLabel::kMalignant;
      } else if (u < config.class_mix[0]) {
        label = DiagnosisLabel::kNormal;
      } else if (u < config.class_mix[0] + config.class_mix[1]) {
        label = DiagnosisLabel::kBenign;
      } else {
        label = DiagnosisLabel::kMalignant;
      }
      ImageRecord rec =
          generate_record(config, label, s.sup, label_rng(), gain);
      rec.id = numbered(s.prefix, i);
      rec.group = group;
      rec.split = s.split;
      rec.image_path = "images/" + rec.id + ".png";
      m.records.push_back(std::move(rec));
    }
  }
  return m;
}

}  // namespace wsod
