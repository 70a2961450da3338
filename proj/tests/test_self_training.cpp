#include <doctest.h>

#include <algorithm>
#include <fstream>
#include <map>
#include <set>

#include <json.hpp>

#include "loss_oracles.hpp"
#include "test_helpers.hpp"
#include "tiny_setup.hpp"
#include "wsod/self_training.hpp"

using namespace wsod;

namespace {

// `n` weak B/M/N records built by relabelling a few rendered images.
std::vector<ImageRecord> weak_pool(std::size_t n, std::uint64_t seed) {
  const auto data = generate_synthetic(testutil::tiny_data(0, 12, 0, 0, seed));
  std::vector<ImageRecord> base = data.select(Split::kTrain, Supervision::kWeak);
  std::vector<ImageRecord> out;
  for (std::size_t i = 0; i < n; ++i) {
    ImageRecord r = base[i % base.size()];
    r.id = "w" + std::to_string(i);
    out.push_back(std::move(r));
  }
  return out;
}

PromotionConfig permissive() {
  PromotionConfig c;
  c.prob_threshold = 0.0;  // an untrained model rarely clears 0.5
  return c;
}

}  // namespace

TEST_CASE("promotion quota is floor(fraction * n)") {
  CHECK(promotion_quota(0.5, 4974) == 2487);
  CHECK(promotion_quota(0.29, 100) == 29);
  CHECK(promotion_quota(0.5, 5) == 2);
  CHECK(promotion_quota(0.1, 9) == 0);
  for (std::size_t n = 1; n < 300; ++n) {
    for (int k = 1; k < 20; ++k) {
      const double f = k / 20.0;
      CHECK(promotion_quota(f, n) == (static_cast<std::size_t>(k) * n) / 20);
    }
  }
}

TEST_CASE("promotion order") {
  const std::vector<std::optional<double>> c{0.4, std::nullopt, 0.9, 0.4, std::nullopt, 0.95};
  CHECK(promotion_order(c) == std::vector<std::size_t>{5, 2, 0, 3, 1, 4});

  Rng rng(70);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<std::optional<double>> conf(uniform_int(rng, 0, 30));
    for (auto& v : conf) {
      if (uniform(rng, 0, 1) < 0.8) v = uniform_int(rng, 0, 5) / 5.0;  // many ties
    }
    const auto order = promotion_order(conf);
    REQUIRE(order.size() == conf.size());
    std::vector<std::size_t> sorted = order;
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t i = 0; i < sorted.size(); ++i) CHECK(sorted[i] == i);
    for (std::size_t i = 1; i < order.size(); ++i) {
      const auto& a = conf[order[i - 1]];
      const auto& b = conf[order[i]];
      if (a && b) {
        CHECK(*a >= *b);
        if (*a == *b) CHECK(order[i - 1] < order[i]);
      } else if (!a) {
        CHECK_FALSE(b.has_value());
        CHECK(order[i - 1] < order[i]);
      }
    }
  }
}

TEST_CASE("promotion config validation") {
  PromotionConfig c;
  CHECK_NOTHROW(validate(c));
  c.fraction = 0.0;
  CHECK_THROWS_AS(validate(c), std::invalid_argument);
  c.fraction = 1.0;
  CHECK_THROWS_AS(validate(c), std::invalid_argument);
  c = {};
  c.rounds = 0;
  CHECK_THROWS_AS(validate(c), std::invalid_argument);
}

TEST_CASE("promotion: ranking, conservation and pseudo boxes") {
  const Detector model(testutil::tiny_detector(), 71);
  const auto weak = weak_pool(60, 1);
  const PromotionConfig cfg = permissive();
  const auto res = promote(model, weak, cfg);

  // Conservation: every weak image ends up in exactly one list.
  CHECK(res.promoted.size() + res.remaining.size() == weak.size());
  CHECK(res.ranking.size() == weak.size());
  std::set<std::string> ids;
  for (const auto& r : res.promoted) ids.insert(r.id);
  for (const auto& r : res.remaining) ids.insert(r.id);
  CHECK(ids.size() == weak.size());
  for (const auto& r : res.remaining) CHECK(r.is_weak());

  // Independent confidence: best label probability among survivors.
  std::size_t eligible = 0;
  std::map<std::string, std::optional<double>> want;
  std::map<std::string, std::vector<RegionPrediction>> survivors;
  for (const auto& r : weak) {
    const auto label = r.weak().label;
    const int l = static_cast<int>(label);
    survivors[r.id] = postprocess(model.forward(r.image).regions, cfg.prob_threshold, cfg.nms_iou);
    std::optional<double> c;
    if (label != DiagnosisLabel::kNormal) {
      for (const auto& s : survivors[r.id]) c = std::max(c.value_or(-1.0), s.probs[l]);
    }
    if (c) ++eligible;
    want[r.id] = c;
  }
  REQUIRE(eligible > 0);
  const std::size_t quota = promotion_quota(cfg.fraction, weak.size());
  CHECK(res.promoted.size() == std::min(quota, eligible));

  for (std::size_t i = 0; i < res.ranking.size(); ++i) {
    const auto& e = res.ranking[i];
    CHECK(e.confidence == want[e.id]);
    CHECK(e.promoted == (i < res.promoted.size()));
    if (i > 0 && e.confidence) CHECK(*res.ranking[i - 1].confidence >= *e.confidence);
    if (e.label == DiagnosisLabel::kNormal) CHECK_FALSE(e.promoted);
  }

  for (const auto& p : res.promoted) {
    const auto& ann = p.strong();
    const auto& orig = *std::find_if(weak.begin(), weak.end(),
                                     [&](const ImageRecord& r) { return r.id == p.id; });
    CHECK(ann.moi_label == orig.weak().label);
    CHECK(p.image == orig.image);
    const auto& surv = survivors[p.id];
    const int l = static_cast<int>(ann.moi_label);
    bool box_is_best = false;
    for (const auto& s : surv) {
      if (s.box == ann.moi_box && s.probs[l] == *want[p.id]) box_is_best = true;
    }
    CHECK(box_is_best);
    CHECK(static_cast<int>(ann.background_boxes.size()) <= cfg.background_boxes);
    for (const auto& b : ann.background_boxes) {
      CHECK(b.x_min >= 0.0);
      CHECK(b.y_min >= 0.0);
      CHECK(b.x_max <= p.image.width);
      CHECK(b.y_max <= p.image.height);
      CHECK(b.width() >= 0.08 * p.image.width - 1e-9);
      CHECK(b.width() <= 0.25 * p.image.width + 1e-9);
      for (const auto& s : surv) CHECK(oracle::box_iou(b, s.box) == 0.0);
    }
  }
}

TEST_CASE("promotion of a large weak set takes exactly the quota") {
  const Detector model(testutil::tiny_detector(), 72);
  // Labels B/M only so every image is eligible.
  auto weak = weak_pool(4974, 2);
  for (std::size_t i = 0; i < weak.size(); ++i) {
    weak[i].annotation = WeakAnnotation{i % 2 ? DiagnosisLabel::kBenign : DiagnosisLabel::kMalignant};
  }
  PromotionConfig cfg = permissive();
  cfg.background_boxes = 0;
  const auto res = promote(model, weak, cfg);
  CHECK(res.promoted.size() == 2487);
  CHECK(res.remaining.size() == 2487);
}

TEST_CASE("promotion is deterministic and rejects strong input") {
  const Detector model(testutil::tiny_detector(), 73);
  const auto weak = weak_pool(12, 3);
  const auto a = promote(model, weak, permissive());
  const auto b = promote(model, weak, permissive());
  CHECK(a.promoted == b.promoted);
  const auto strong = generate_synthetic(testutil::tiny_data(2, 0, 0)).records;
  CHECK_THROWS_AS(promote(model, strong, permissive()), std::invalid_argument);
}

TEST_CASE("self-training retrains from a fresh initialization") {
  const auto data = generate_synthetic(testutil::tiny_data(3, 8, 4, 2));
  TrainConfig t = testutil::tiny_train(0);
  PromotionConfig p = permissive();
  EvalOptions e;
  e.resamples = 200;
  const auto res = self_train(data, testutil::tiny_detector(), t, p, e);
  // With no iterations both models equal the seeded initialization.
  const Detector fresh(testutil::tiny_detector(), t.seed);
  CHECK(res.initial.params() == fresh.params());
  CHECK(res.retrained.params() == fresh.params());
  REQUIRE(res.rounds.size() == 1);
  CHECK(res.initial_eval.has_value());
  CHECK(res.retrained_eval.has_value());

  t.iterations = 3;
  p.rounds = 2;
  const auto two = self_train(data, testutil::tiny_detector(), t, p, e);
  REQUIRE(two.rounds.size() == 2);
  const std::size_t weak0 = data.count(Split::kTrain, Supervision::kWeak);
  CHECK(two.rounds[0].promoted.size() + two.rounds[0].remaining.size() == weak0);
  CHECK(two.rounds[1].ranking.size() == two.rounds[0].remaining.size());
  CHECK(two.retrained_state.history.size() == 3);

  p.rounds = 1;
  p.retrain_iterations = 5;
  const auto longer = self_train(data, testutil::tiny_detector(), t, p, e);
  CHECK(longer.initial_state.history.size() == 3);
  CHECK(longer.retrained_state.history.size() == 5);
  CHECK(longer.retrained_state.iteration == 5);
  p.retrain_iterations = -1;
  CHECK_THROWS_AS(validate(p), std::invalid_argument);

  DatasetManifest no_weak = generate_synthetic(testutil::tiny_data(3, 0, 0));
  CHECK_THROWS(self_train(no_weak, testutil::tiny_detector(), t, p, e));
}

TEST_CASE("promotion report has one JSON line per weak image") {
  const Detector model(testutil::tiny_detector(), 74);
  const auto weak = weak_pool(10, 4);
  const auto res = promote(model, weak, permissive());
  const auto dir = testutil::temp_dir("promo");
  write_promotion_report(res, dir / "promotion.jsonl");
  std::ifstream in(dir / "promotion.jsonl");
  std::string line;
  int n = 0, promoted = 0;
  while (std::getline(in, line)) {
    const auto j = nlohmann::json::parse(line);
    CHECK(j.contains("id"));
    CHECK(j.contains("confidence"));
    promoted += j.at("promoted").get<bool>();
    if (j.at("promoted").get<bool>()) CHECK(j.at("pseudo_box").size() == 4);
    ++n;
  }
  CHECK(n == 10);
  CHECK(promoted == static_cast<int>(res.promoted.size()));
  std::filesystem::remove_all(dir);
}
