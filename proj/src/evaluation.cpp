#include "wsod/evaluation.hpp"

#include <algorithm>
#include <boost/math/distributions/students_t.hpp>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "wsod/nms.hpp"
#include "wsod/rng.hpp"

namespace wsod {

std::vector<RegionPrediction> postprocess(
    std::span<const RegionPrediction> regions, double prob_threshold,
    double nms_iou) {
  std::vector<RegionPrediction> kept;
  std::vector<double> scores;
  for (const auto& r : regions) {
    const double s = r.foreground_score();
    if (prob_threshold <= 0.0 || s > prob_threshold) {
      kept.push_back(r);
      scores.push_back(s);
    }
  }
  return nms(kept, nms_iou, scores);
}

DetectionResult postprocess(const DetectionResult& raw, double prob_threshold,
                            double nms_iou) {
  return {raw.image_id, postprocess(raw.regions, prob_threshold, nms_iou),
          raw.ground_truth};
}

namespace {

const StrongAnnotation& strong_gt(const DetectionResult& r) {
  const auto* s = std::get_if<StrongAnnotation>(&r.ground_truth);
  if (!s) {
    throw std::invalid_argument("image '" + r.image_id +
                                "' has no box annotation for CorLoc");
  }
  return *s;
}

bool is_normal(const DetectionResult& r) {
  const auto* w = std::get_if<WeakAnnotation>(&r.ground_truth);
  return w && w->label == DiagnosisLabel::kNormal;
}

}  // namespace

bool corloc_correct(const DetectionResult& result) {
  const StrongAnnotation& gt = strong_gt(result);
  const std::size_t c = index_of(gt.moi_label);
  for (const auto& r : result.regions) {
    if (r.probs[c] > 0.5 && iou(r.box, gt.moi_box) > 0.5) return true;
  }
  return false;
}

std::vector<int> corloc_indicators(std::span<const DetectionResult> results) {
  std::vector<int> out;
  out.reserve(results.size());
  for (const auto& r : results) out.push_back(corloc_correct(r) ? 1 : 0);
  return out;
}

double corloc(std::span<const DetectionResult> results) {
  if (results.empty()) return 0.0;
  const auto ind = corloc_indicators(results);
  return static_cast<double>(std::accumulate(ind.begin(), ind.end(), 0)) /
         static_cast<double>(ind.size());
}

std::vector<double> froc_grid(int points) {
  if (points < 2) throw std::invalid_argument("froc grid needs >= 2 points");
  std::vector<double> g(points);
  for (int i = 0; i < points; ++i) g[i] = static_cast<double>(i) / (points - 1);
  g.back() = 1.0;
  return g;
}

std::vector<FrocPoint> froc(std::span<const DetectionResult> raw,
                            std::span<const double> thresholds,
                            double nms_iou) {
  if (thresholds.empty()) throw std::invalid_argument("froc: empty grid");
  std::size_t lesions = 0;
  for (const auto& r : raw) {
    if (!is_normal(r)) {
      strong_gt(r);
      ++lesions;
    }
  }
  std::vector<FrocPoint> out;
  for (double t : thresholds) {
    std::size_t fp = 0;
    std::size_t hit = 0;
    for (const auto& r : raw) {
      const auto survivors = postprocess(r.regions, t, nms_iou);
      if (is_normal(r)) {
        fp += survivors.size();
        continue;
      }
      const StrongAnnotation& gt = strong_gt(r);
      const RegionClass gt_class = region_class_of(gt.moi_label);
      // Survivors come in descending score order, so the first match claims
      // the lesion and later matches are duplicates.
      bool claimed = false;
      for (const auto& s : survivors) {
        const bool match = s.foreground_class() == gt_class &&
                           iou(s.box, gt.moi_box) > 0.5;
        if (match && !claimed) {
          claimed = true;
        } else {
          ++fp;
        }
      }
      if (claimed) ++hit;
    }
    FrocPoint p;
    p.threshold = t;
    p.fp_per_image = raw.empty() ? 0.0
                                 : static_cast<double>(fp) /
                                       static_cast<double>(raw.size());
    p.sensitivity = lesions == 0 ? 0.0
                                 : static_cast<double>(hit) /
                                       static_cast<double>(lesions);
    out.push_back(p);
  }
  return out;
}

double fp_per_normal(std::span<const DetectionResult> results) {
  if (results.empty()) return 0.0;
  std::size_t fp = 0;
  for (const auto& r : results) {
    if (!is_normal(r)) {
      throw std::invalid_argument("fp_per_normal: image '" + r.image_id +
                                  "' is not a normal image");
    }
    fp += r.regions.size();
  }
  return static_cast<double>(fp) / static_cast<double>(results.size());
}

namespace {

// Linear interpolation between order statistics (sample quantile type 7).
double quantile(const std::vector<double>& sorted, double q) {
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

double mean_of(std::span<const int> v) {
  return static_cast<double>(std::accumulate(v.begin(), v.end(), 0LL)) /
         static_cast<double>(v.size());
}

}  // namespace

BootstrapReport bootstrap_ci(std::span<const int> indicators, int resamples,
                             double level, std::uint64_t seed) {
  if (indicators.empty()) throw std::invalid_argument("bootstrap: no samples");
  if (resamples < 100) throw std::invalid_argument("bootstrap: resamples < 100");
  if (!(level > 0.0 && level < 1.0)) {
    throw std::invalid_argument("bootstrap: level must lie in (0,1)");
  }
  const std::size_t n = indicators.size();
  Rng rng = make_rng(seed, {0x626f6f74});
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);
  std::vector<double> means(resamples);
  for (int b = 0; b < resamples; ++b) {
    long long sum = 0;
    for (std::size_t i = 0; i < n; ++i) sum += indicators[pick(rng)];
    means[b] = static_cast<double>(sum) / static_cast<double>(n);
  }
  std::sort(means.begin(), means.end());
  BootstrapReport r;
  r.estimate = mean_of(indicators);
  r.low = quantile(means, 0.5 * (1.0 - level));
  r.high = quantile(means, 1.0 - 0.5 * (1.0 - level));
  r.resamples = resamples;
  r.level = level;
  return r;
}

double paired_pvalue(std::span<const int> a, std::span<const int> b,
                     int resamples, std::uint64_t seed) {
  if (a.size() != b.size()) {
    throw std::invalid_argument("paired_pvalue: indicator lists differ in length");
  }
  if (a.size() < 2) throw std::invalid_argument("paired_pvalue: need n >= 2");
  if (resamples < 2) throw std::invalid_argument("paired_pvalue: resamples < 2");
  const std::size_t n = a.size();
  Rng rng = make_rng(seed, {0x7061697265});
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);
  std::vector<double> diffs(resamples);
  for (int r = 0; r < resamples; ++r) {
    long long sum = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t k = pick(rng);
      sum += a[k] - b[k];
    }
    diffs[r] = static_cast<double>(sum) / static_cast<double>(n);
  }
  const double mean =
      std::accumulate(diffs.begin(), diffs.end(), 0.0) / resamples;
  double ss = 0.0;
  for (double d : diffs) ss += (d - mean) * (d - mean);
  const double sd = std::sqrt(ss / (resamples - 1));
  if (sd == 0.0) return mean == 0.0 ? 1.0 : 0.0;
  const double t = mean / sd;
  const boost::math::students_t dist(static_cast<double>(n - 1));
  return std::clamp(2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(t))),
                    0.0, 1.0);
}

void validate(const EvalOptions& o) {
  if (!(o.prob_threshold >= 0.0 && o.prob_threshold <= 1.0)) {
    throw std::invalid_argument("eval: prob_threshold must lie in [0,1]");
  }
  if (!(o.nms_iou > 0.0 && o.nms_iou <= 1.0)) {
    throw std::invalid_argument("eval: nms_iou must lie in (0,1]");
  }
  if (o.froc_points < 2) throw std::invalid_argument("eval: froc_points < 2");
  if (o.resamples < 100) throw std::invalid_argument("eval: resamples < 100");
  if (!(o.ci_level > 0.0 && o.ci_level < 1.0)) {
    throw std::invalid_argument("eval: ci_level must lie in (0,1)");
  }
}

std::vector<DetectionResult> detect(const Detector& model,
                                    std::span<const ImageRecord> records) {
  std::vector<DetectionResult> out;
  out.reserve(records.size());
  for (const auto& r : records) {
    out.push_back({r.id, model.forward(r.image).regions, r.annotation});
  }
  return out;
}

EvalReport evaluate(std::span<const DetectionResult> raw,
                    const EvalOptions& options) {
  validate(options);
  EvalReport rep;
  rep.num_images = raw.size();
  std::vector<DetectionResult> lesion, normal;
  for (const auto& r : raw) {
    if (is_normal(r)) {
      normal.push_back(postprocess(r, options.prob_threshold, options.nms_iou));
    } else {
      strong_gt(r);
      lesion.push_back(postprocess(r, options.prob_threshold, options.nms_iou));
      rep.image_ids.push_back(r.image_id);
    }
  }
  rep.num_normal = normal.size();
  rep.indicators = corloc_indicators(lesion);
  rep.corloc = corloc(lesion);
  if (!rep.indicators.empty()) {
    rep.corloc_ci = bootstrap_ci(rep.indicators, options.resamples,
                                 options.ci_level, options.bootstrap_seed);
  }
  const auto grid = froc_grid(options.froc_points);
  rep.froc = froc(raw, grid, options.nms_iou);
  if (!normal.empty()) rep.fp_per_normal = fp_per_normal(normal);
  return rep;
}

void write_froc_svg(std::span<const FrocCurve> curves,
                    const std::filesystem::path& path) {
  constexpr double W = 640, H = 440, L = 60, R = 20, T = 30, B = 50;
  double xmax = 0.0;
  for (const auto& c : curves) {
    for (const auto& p : c.points) xmax = std::max(xmax, p.fp_per_image);
  }
  xmax = xmax <= 0.0 ? 1.0 : std::ceil(xmax * 10.0) / 10.0;
  auto px = [&](double x) { return L + (W - L - R) * x / xmax; };
  auto py = [&](double y) { return H - B - (H - T - B) * y; };
  static const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                                  "#ff7f0e", "#8c564b"};
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  char buf[256];
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W
      << "\" height=\"" << H << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  std::snprintf(buf, sizeof buf,
                "<line x1=\"%g\" y1=\"%g\" x2=\"%g\" y2=\"%g\" stroke=\"black\"/>\n"
                "<line x1=\"%g\" y1=\"%g\" x2=\"%g\" y2=\"%g\" stroke=\"black\"/>\n",
                L, H - B, W - R, H - B, L, T, L, H - B);
  out << buf;
  for (int i = 0; i <= 5; ++i) {
    const double y = i / 5.0;
    const double x = xmax * i / 5.0;
    std::snprintf(buf, sizeof buf,
                  "<text x=\"%g\" y=\"%g\" text-anchor=\"end\">%.1f</text>\n"
                  "<text x=\"%g\" y=\"%g\" text-anchor=\"middle\">%.2f</text>\n",
                  L - 6, py(y) + 4, y, px(x), H - B + 16, x);
    out << buf;
  }
  std::snprintf(buf, sizeof buf,
                "<text x=\"%g\" y=\"%g\" text-anchor=\"middle\">FP per image</text>\n"
                "<text x=\"14\" y=\"%g\" text-anchor=\"middle\" "
                "transform=\"rotate(-90 14 %g)\">Sensitivity</text>\n",
                (L + W - R) / 2, H - 12, (T + H - B) / 2, (T + H - B) / 2);
  out << buf;
  for (std::size_t ci = 0; ci < curves.size(); ++ci) {
    const auto& c = curves[ci];
    const char* color = kColors[ci % 6];
    if (c.band_low.size() == c.points.size() &&
        c.band_high.size() == c.points.size() && !c.points.empty()) {
      out << "<polygon fill=\"" << color << "\" fill-opacity=\"0.15\" points=\"";
      for (std::size_t i = 0; i < c.points.size(); ++i) {
        std::snprintf(buf, sizeof buf, "%.2f,%.2f ", px(c.points[i].fp_per_image),
                      py(c.band_high[i]));
        out << buf;
      }
      for (std::size_t i = c.points.size(); i-- > 0;) {
        std::snprintf(buf, sizeof buf, "%.2f,%.2f ", px(c.points[i].fp_per_image),
                      py(c.band_low[i]));
        out << buf;
      }
      out << "\"/>\n";
    }
    out << "<polyline fill=\"none\" stroke=\"" << color
        << "\" stroke-width=\"2\" points=\"";
    for (const auto& p : c.points) {
      std::snprintf(buf, sizeof buf, "%.2f,%.2f ", px(p.fp_per_image),
                    py(p.sensitivity));
      out << buf;
    }
    out << "\"/>\n";
    std::snprintf(buf, sizeof buf,
                  "<text x=\"%g\" y=\"%g\" fill=\"%s\">%s</text>\n", W - R - 160,
                  T + 16.0 * (ci + 1), color, c.label.c_str());
    out << buf;
  }
  out << "</svg>\n";
}

}  // namespace wsod
