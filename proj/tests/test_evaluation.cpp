#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include <boost/math/distributions/students_t.hpp>

#include "loss_oracles.hpp"
#include "test_helpers.hpp"
#include "tiny_setup.hpp"
#include "wsod/evaluation.hpp"

using namespace wsod;

namespace {

RegionPrediction region(BBox box, ProbTriple probs) {
  RegionPrediction r;
  r.box = box;
  r.probs = probs;
  return r;
}

DetectionResult lesion(std::string id, BBox gt, DiagnosisLabel label,
                       std::vector<RegionPrediction> regions) {
  StrongAnnotation a;
  a.moi_box = gt;
  a.moi_label = label;
  return {std::move(id), std::move(regions), a};
}

DetectionResult normal(std::string id, std::vector<RegionPrediction> regions) {
  return {std::move(id), std::move(regions), WeakAnnotation{DiagnosisLabel::kNormal}};
}

// Random results around a GT box: near-GT boxes and clutter with random
// probabilities.
DetectionResult random_result(Rng& rng, int k) {
  const BBox gt = testutil::random_box(rng, 100, 15, 40);
  const auto label = uniform(rng, 0, 1) < 0.5 ? DiagnosisLabel::kBenign : DiagnosisLabel::kMalignant;
  std::vector<RegionPrediction> regions;
  const int n = uniform_int(rng, 0, 8);
  for (int i = 0; i < n; ++i) {
    BBox b = testutil::random_box(rng, 100, 5, 40);
    if (uniform(rng, 0, 1) < 0.5) {
      b = {gt.x_min + uniform(rng, -4, 4), gt.y_min + uniform(rng, -4, 4),
           gt.x_max + uniform(rng, -4, 4), gt.y_max + uniform(rng, -4, 4)};
    }
    regions.push_back(region(b, testutil::random_probs(rng)));
  }
  if (k % 7 == 0) return normal("n" + std::to_string(k), regions);
  return lesion("l" + std::to_string(k), gt, label, regions);
}

// Plain greedy suppression: highest score first, stable on ties.
std::vector<RegionPrediction> postprocess_oracle(const std::vector<RegionPrediction>& in,
                                                 double thr, double nms_iou) {
  std::vector<std::size_t> order;
  for (std::size_t i = 0; i < in.size(); ++i) {
    const double s = std::max(in[i].probs[1], in[i].probs[2]);
    if (thr <= 0.0 || s > thr) order.push_back(i);
  }
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return std::max(in[a].probs[1], in[a].probs[2]) > std::max(in[b].probs[1], in[b].probs[2]);
  });
  std::vector<RegionPrediction> kept;
  for (std::size_t i : order) {
    bool keep = true;
    for (const auto& k : kept) {
      if (oracle::box_iou(k.box, in[i].box) > nms_iou) keep = false;
    }
    if (keep) kept.push_back(in[i]);
  }
  return kept;
}

}  // namespace

TEST_CASE("postprocess examples") {
  const std::vector<RegionPrediction> in{
      region({10, 10, 30, 30}, {0.1, 0.9, 0.0}),
      region({12, 10, 32, 30}, {0.4, 0.0, 0.6}),  // overlaps the first
      region({60, 60, 80, 80}, {0.3, 0.0, 0.7}),
      region({60, 10, 80, 30}, {0.5, 0.5, 0.0}),  // exactly at the threshold
  };
  auto out = postprocess(in, 0.5, 0.3);
  REQUIRE(out.size() == 2);
  CHECK(out[0].box == in[0].box);
  CHECK(out[1].box == in[2].box);
  CHECK(postprocess(in, 0.0, 1.0).size() == 4);
  CHECK(postprocess(in, 1.0, 1.0).empty());
  CHECK(postprocess(in, 0.0, 0.3).size() == 3);
}

TEST_CASE("postprocess agrees with threshold-then-greedy-NMS") {
  Rng rng(60);
  for (int trial = 0; trial < 500; ++trial) {
    const auto r = random_result(rng, 1);
    const double thr = uniform_int(rng, 0, 4) * 0.25;
    const double nms_iou = std::array{0.1, 0.3, 0.5, 1.0}[uniform_int(rng, 0, 3)];
    const auto got = postprocess(r.regions, thr, nms_iou);
    const auto want = postprocess_oracle(r.regions, thr, nms_iou);
    REQUIRE(got.size() == want.size());
    for (std::size_t i = 0; i < got.size(); ++i) CHECK(got[i] == want[i]);
  }
}

TEST_CASE("CorLoc examples") {
  const BBox gt{10, 10, 30, 30};
  using L = DiagnosisLabel;
  CHECK(corloc_correct(lesion("a", gt, L::kBenign, {region(gt, {0.1, 0.8, 0.1})})));
  // Right box, wrong class.
  CHECK_FALSE(corloc_correct(lesion("b", gt, L::kMalignant, {region(gt, {0.1, 0.8, 0.1})})));
  // Probability exactly 0.5 is not enough.
  CHECK_FALSE(corloc_correct(lesion("c", gt, L::kBenign, {region(gt, {0.5, 0.5, 0.0})})));
  // IoU 1/3.
  CHECK_FALSE(corloc_correct(lesion("d", gt, L::kBenign, {region({20, 10, 40, 30}, {0, 1, 0})})));
  CHECK_FALSE(corloc_correct(lesion("e", gt, L::kBenign, {})));
  CHECK_THROWS_AS(corloc_correct(normal("n", {})), std::invalid_argument);
  CHECK(corloc(std::vector<DetectionResult>{}) == 0.0);
}

TEST_CASE("CorLoc agrees with the oracle on random results") {
  Rng rng(61);
  std::vector<DetectionResult> results;
  while (results.size() < 200) {
    auto r = random_result(rng, 1);
    results.push_back(std::move(r));
  }
  int hits = 0;
  for (const auto& r : results) {
    const auto& gt = std::get<StrongAnnotation>(r.ground_truth);
    const int c = static_cast<int>(gt.moi_label);
    bool ok = false;
    for (const auto& p : r.regions) {
      ok = ok || (p.probs[c] > 0.5 && oracle::box_iou(p.box, gt.moi_box) > 0.5);
    }
    hits += ok;
  }
  CHECK(corloc(results) == doctest::Approx(hits / 200.0).epsilon(1e-12));
  CHECK(hits > 0);
  CHECK(hits < 200);
}

TEST_CASE("FROC hand example") {
  using L = DiagnosisLabel;
  const BBox gt{10, 10, 30, 30};
  const std::vector<DetectionResult> raw{
      lesion("a", gt, L::kBenign,
             {region(gt, {0.1, 0.8, 0.1}), region({60, 60, 80, 80}, {0.3, 0.1, 0.6}),
              region({11, 10, 31, 30}, {0.15, 0.75, 0.1})}),
      lesion("b", gt, L::kMalignant, {region(gt, {0.2, 0.7, 0.1})}),
      normal("c", {region({40, 40, 60, 60}, {0.1, 0.45, 0.45})}),
  };
  const std::vector<double> t{0.0, 0.5, 0.65, 0.75, 0.8};
  const auto f = froc(raw, t, 1.0);
  REQUIRE(f.size() == 5);
  const double fp[] = {4.0 / 3, 1.0, 2.0 / 3, 0.0, 0.0};
  const double sens[] = {0.5, 0.5, 0.5, 0.5, 0.0};
  for (int i = 0; i < 5; ++i) {
    CHECK(f[i].threshold == t[i]);
    CHECK(f[i].fp_per_image == doctest::Approx(fp[i]));
    CHECK(f[i].sensitivity == doctest::Approx(sens[i]));
  }
}

TEST_CASE("FROC is monotone in the threshold") {
  Rng rng(62);
  std::vector<DetectionResult> raw;
  for (int k = 0; k < 150; ++k) raw.push_back(random_result(rng, k));
  for (double nms_iou : {0.3, 1.0}) {
    const auto grid = froc_grid(101);
    const auto f = froc(raw, grid, nms_iou);
    REQUIRE(f.size() == 101);
    for (std::size_t i = 1; i < f.size(); ++i) {
      CHECK(f[i].fp_per_image <= f[i - 1].fp_per_image);
      CHECK(f[i].sensitivity <= f[i - 1].sensitivity);
    }
    CHECK(f.back().fp_per_image == 0.0);
    CHECK(f.back().sensitivity == 0.0);
  }
  const auto g = froc_grid(101);
  CHECK(g.front() == 0.0);
  CHECK(g[50] == 0.5);
  CHECK(g.back() == 1.0);
  CHECK_THROWS(froc_grid(1));
}

TEST_CASE("FP per normal image") {
  const std::vector<DetectionResult> n{
      normal("a", {region({0, 0, 5, 5}, {0, 1, 0}), region({9, 9, 15, 15}, {0, 1, 0})}),
      normal("b", {}),
  };
  CHECK(fp_per_normal(n) == 1.0);
  const std::vector<DetectionResult> mixed{
      lesion("l", {0, 0, 5, 5}, DiagnosisLabel::kBenign, {})};
  CHECK_THROWS_AS(fp_per_normal(mixed), std::invalid_argument);
}

TEST_CASE("bootstrap interval") {
  const std::vector<int> ones(50, 1);
  auto r = bootstrap_ci(ones, 500, 0.95, 1);
  CHECK(r.estimate == 1.0);
  CHECK(r.low == 1.0);
  CHECK(r.high == 1.0);

  std::vector<int> ind(400);
  Rng rng(63);
  for (auto& v : ind) v = uniform(rng, 0, 1) < 0.7;
  r = bootstrap_ci(ind, 2000, 0.95, 7);
  const double p = std::accumulate(ind.begin(), ind.end(), 0) / 400.0;
  CHECK(r.estimate == p);
  CHECK(r.low < p);
  CHECK(r.high > p);
  CHECK(r.resamples == 2000);
  // Normal-approximation half width.
  const double half = 1.96 * std::sqrt(p * (1 - p) / 400.0);
  CHECK(r.high - r.low == doctest::Approx(2 * half).epsilon(0.15));
  const auto again = bootstrap_ci(ind, 2000, 0.95, 7);
  CHECK(again.low == r.low);
  CHECK(again.high == r.high);
  const auto narrow = bootstrap_ci(ind, 2000, 0.5, 7);
  CHECK(narrow.high - narrow.low < r.high - r.low);
  CHECK_THROWS(bootstrap_ci(std::vector<int>{}, 2000));
  CHECK_THROWS(bootstrap_ci(ind, 10));
}

TEST_CASE("paired p-value") {
  std::vector<int> a(100), b(100);
  Rng rng(64);
  for (auto& v : a) v = uniform(rng, 0, 1) < 0.6;
  CHECK(paired_pvalue(a, a, 500, 1) == 1.0);

  // Constant difference: no spread, a real effect.
  std::vector<int> all1(30, 1), all0(30, 0);
  CHECK(paired_pvalue(all1, all0, 500, 1) == 0.0);

  for (std::size_t i = 0; i < b.size(); ++i) b[i] = a[i] && uniform(rng, 0, 1) < 0.5;
  const double strong_effect = paired_pvalue(a, b, 2000, 2);
  CHECK(strong_effect < 0.01);
  // Swapping the arms negates every bootstrap difference.
  CHECK(paired_pvalue(b, a, 2000, 2) == doctest::Approx(strong_effect));

  // Tiny effect: large p.
  std::vector<int> c = a;
  c[0] = 1 - c[0];
  CHECK(paired_pvalue(a, c, 2000, 3) > 0.2);
  CHECK_THROWS(paired_pvalue(a, std::vector<int>(5), 100, 0));
}

TEST_CASE("evaluate combines the metrics") {
  Rng rng(65);
  std::vector<DetectionResult> raw;
  for (int k = 0; k < 120; ++k) raw.push_back(random_result(rng, k));
  EvalOptions opts;
  opts.resamples = 500;
  const auto rep = evaluate(raw, opts);
  std::vector<DetectionResult> lesions;
  std::size_t normals = 0;
  for (const auto& r : raw) {
    if (std::holds_alternative<WeakAnnotation>(r.ground_truth)) {
      ++normals;
    } else {
      lesions.push_back(postprocess(r, 0.5, 0.3));
    }
  }
  CHECK(rep.num_images == raw.size());
  CHECK(rep.num_normal == normals);
  CHECK(rep.indicators.size() == lesions.size());
  CHECK(rep.image_ids.size() == lesions.size());
  CHECK(rep.corloc == corloc(lesions));
  CHECK(rep.corloc_ci.estimate == rep.corloc);
  CHECK(rep.corloc_ci.low <= rep.corloc);
  CHECK(rep.corloc_ci.high >= rep.corloc);
  REQUIRE(rep.froc.size() == 101);
  REQUIRE(rep.fp_per_normal.has_value());
  // At the operating threshold the FROC sensitivity is the CorLoc.
  CHECK(rep.froc[50].sensitivity == doctest::Approx(rep.corloc));

  EvalOptions bad;
  bad.nms_iou = 0.0;
  CHECK_THROWS(evaluate(raw, bad));
  bad = {};
  bad.prob_threshold = 1.5;
  CHECK_THROWS(validate(bad));
}

TEST_CASE("detect returns one result per record") {
  const auto data = generate_synthetic(testutil::tiny_data(0, 0, 3, 2));
  Detector model(testutil::tiny_detector(), 3);
  const auto res = detect(model, data.records);
  REQUIRE(res.size() == data.records.size());
  for (std::size_t i = 0; i < res.size(); ++i) {
    CHECK(res[i].image_id == data.records[i].id);
    CHECK(res[i].ground_truth == data.records[i].annotation);
    CHECK(res[i].regions.size() <= 8);
  }
  CHECK_NOTHROW(evaluate(res, EvalOptions{}));
}

TEST_CASE("FROC chart") {
  const auto dir = testutil::temp_dir("svg");
  FrocCurve a{"strong-only baseline", {{0.0, 2.0, 0.9}, {1.0, 0.0, 0.0}}, {}, {}};
  FrocCurve b{"joint", {{0.0, 1.0, 1.0}, {1.0, 0.0, 0.0}}, {0.8, 0.0}, {1.0, 0.0}};
  const std::vector<FrocCurve> curves{a, b};
  write_froc_svg(curves, dir / "froc.svg");
  std::ifstream in(dir / "froc.svg");
  std::stringstream ss;
  ss << in.rdbuf();
  const std::string svg = ss.str();
  CHECK(svg.rfind("<svg", 0) == 0);
  CHECK(svg.find("strong-only baseline") != std::string::npos);
  CHECK(svg.find("<polygon") != std::string::npos);
  CHECK(std::count(svg.begin(), svg.end(), '\n') > 5);
  std::filesystem::remove_all(dir);
}

TEST_CASE("CorLoc invariants") {
  Rng rng(66);
  std::vector<DetectionResult> raw;
  while (raw.size() < 300) {
    auto r = random_result(rng, 1);
    raw.push_back(std::move(r));
  }
  const auto ind = corloc_indicators(raw);
  CHECK(corloc(raw) == std::accumulate(ind.begin(), ind.end(), 0) / 300.0);

  // Thresholding at 0.5 never removes a region that CorLoc could use.
  std::vector<DetectionResult> thresholded;
  for (const auto& r : raw) thresholded.push_back(postprocess(r, 0.5, 1.0));
  CHECK(corloc_indicators(thresholded) == ind);
}

TEST_CASE("bootstrap interval covers the estimate across seeds") {
  Rng rng(67);
  std::vector<int> ind(200);
  for (auto& v : ind) v = uniform(rng, 0, 1) < 0.8;
  int covered = 0;
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const auto r = bootstrap_ci(ind, 500, 0.95, seed);
    covered += r.low <= r.estimate && r.estimate <= r.high;
  }
  CHECK(covered >= 198);
}

TEST_CASE("paired p-value on a 30% dominance case agrees with a direct paired t-test") {
  const std::size_t n = 400;
  std::vector<int> a(n), b(n);
  Rng rng(68);
  for (std::size_t i = 0; i < n; ++i) {
    b[i] = uniform(rng, 0, 1) < 0.5;
    a[i] = i < 120 ? 1 : b[i];
    if (i < 120) b[i] = 0;
  }
  // Direct paired t on per-image differences.
  double mean = 0.0;
  for (std::size_t i = 0; i < n; ++i) mean += a[i] - b[i];
  mean /= n;
  double ss = 0.0;
  for (std::size_t i = 0; i < n; ++i) ss += (a[i] - b[i] - mean) * (a[i] - b[i] - mean);
  const double se = std::sqrt(ss / (n - 1) / n);
  const boost::math::students_t dist(n - 1.0);
  const double direct = 2 * boost::math::cdf(boost::math::complement(dist, mean / se));
  CHECK(direct < 0.01);
  CHECK(paired_pvalue(a, b, 2000, 5) < 0.01);
  CHECK(paired_pvalue(a, a, 2000, 5) >= 0.99);
}
