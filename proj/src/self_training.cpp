#include "wsod/self_training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include <json.hpp>

#include "wsod/losses.hpp"

namespace wsod {

void validate(const PromotionConfig& c) {
  if (!(c.fraction > 0.0 && c.fraction < 1.0)) {
    throw std::invalid_argument("promotion: fraction must lie in (0,1)");
  }
  if (c.background_boxes < 0 || c.max_attempts < 0) {
    throw std::invalid_argument("promotion: negative box count or budget");
  }
  if (c.rounds < 1) throw std::invalid_argument("promotion: rounds must be >= 1");
  if (c.retrain_iterations < 0) {
    throw std::invalid_argument("promotion: negative retrain_iterations");
  }
  if (!(c.prob_threshold >= 0.0 && c.prob_threshold <= 1.0) ||
      !(c.nms_iou > 0.0 && c.nms_iou <= 1.0)) {
    throw std::invalid_argument("promotion: bad post-processing thresholds");
  }
}

std::vector<std::size_t> promotion_order(
    std::span<const std::optional<double>> confidence) {
  std::vector<std::size_t> order(confidence.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const auto& ca = confidence[a];
    const auto& cb = confidence[b];
    if (ca.has_value() != cb.has_value()) return ca.has_value();
    return ca && *ca > *cb;
  });
  return order;
}

std::size_t promotion_quota(double fraction, std::size_t n) {
  // The slack keeps products such as 0.29 * 100 from flooring one short.
  return static_cast<std::size_t>(
      std::floor(fraction * static_cast<double>(n) + 1e-9));
}

namespace {

std::vector<BBox> sample_background(const std::vector<RegionPrediction>& dets,
                                    int width, int height, int count,
                                    int max_attempts, Rng& rng) {
  std::vector<BBox> out;
  for (int attempt = 0;
       attempt < max_attempts && static_cast<int>(out.size()) < count;
       ++attempt) {
    const double w = uniform(rng, 0.08, 0.25) * width;
    const double h = uniform(rng, 0.08, 0.25) * height;
    const double x = uniform(rng, 0.0, width - w);
    const double y = uniform(rng, 0.0, height - h);
    const BBox b{x, y, x + w, y + h};
    bool clear = true;
    for (const auto& d : dets) {
      if (iou(b, d.box) > 0.0) {
        clear = false;
        break;
      }
    }
    if (clear) out.push_back(b);
  }
  return out;
}

}  // namespace

PromotionResult promote(const Detector& model,
                        std::span<const ImageRecord> weak,
                        const PromotionConfig& config) {
  validate(config);
  const std::size_t n = weak.size();
  std::vector<std::optional<double>> confidence(n);
  std::vector<std::vector<RegionPrediction>> survivors(n);
  std::vector<std::optional<std::size_t>> moi(n);
  for (std::size_t i = 0; i < n; ++i) {
    const ImageRecord& r = weak[i];
    if (!r.is_weak()) {
      throw std::invalid_argument("promote: record '" + r.id + "' is not weak");
    }
    const DiagnosisLabel label = r.weak().label;
    if (label == DiagnosisLabel::kNormal) continue;
    survivors[i] = postprocess(model.forward(r.image).regions,
                               config.prob_threshold, config.nms_iou);
    if (survivors[i].empty()) continue;
    const MoICriterion crit = label == DiagnosisLabel::kBenign
                                  ? MoICriterion::kMostBenign
                                  : MoICriterion::kMostMalignant;
    const auto pred = image_level_prediction(survivors[i], label, crit);
    moi[i] = pred.moi;
    confidence[i] = pred.probs[index_of(label)];
  }

  PromotionResult out;
  const auto order = promotion_order(confidence);
  const std::size_t quota = promotion_quota(config.fraction, n);
  std::vector<char> promoted(n, 0);
  std::size_t taken = 0;
  for (std::size_t i : order) {
    const ImageRecord& r = weak[i];
    PromotionEntry e;
    e.id = r.id;
    e.label = r.weak().label;
    e.confidence = confidence[i];
    if (confidence[i] && taken < quota) {
      ++taken;
      promoted[i] = 1;
      e.promoted = true;
      e.pseudo_box = survivors[i][*moi[i]].box;
      Rng rng = make_rng(config.seed, {0x6267, i});
      e.background_boxes =
          sample_background(survivors[i], r.image.width, r.image.height,
                            config.background_boxes, config.max_attempts, rng);
      ImageRecord s = r;
      s.annotation = StrongAnnotation{*e.pseudo_box, e.label, e.background_boxes};
      validate_strong(s.strong(), s.image.width, s.image.height, s.id);
      out.promoted.push_back(std::move(s));
    }
    out.ranking.push_back(std::move(e));
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (!promoted[i]) out.remaining.push_back(weak[i]);
  }
  return out;
}

SelfTrainResult self_train(const DatasetManifest& manifest,
                           const DetectorConfig& detector_config,
                           const TrainConfig& train_config,
                           const PromotionConfig& promotion_config,
                           const EvalOptions& eval_options,
                           const Detector* initial) {
  validate(promotion_config);
  auto strong = manifest.select(Split::kTrain, Supervision::kStrong);
  auto weak = manifest.select(Split::kTrain, Supervision::kWeak);
  if (weak.empty()) throw std::invalid_argument("self_train: empty weak set");
  std::vector<ImageRecord> test;
  for (const auto& r : manifest.records) {
    if (r.split == Split::kTest) test.push_back(r);
  }

  SelfTrainResult res{initial ? *initial : Detector(detector_config, train_config.seed),
                      Detector(detector_config, train_config.seed),
                      {}, {}, {}, std::nullopt, std::nullopt};
  if (!initial) res.initial_state = train(res.initial, strong, weak, train_config);
  if (!test.empty()) {
    res.initial_eval = evaluate(detect(res.initial, test), eval_options);
  }

  TrainConfig retrain_config = train_config;
  if (promotion_config.retrain_iterations > 0) {
    retrain_config.iterations = promotion_config.retrain_iterations;
  }
  const Detector* current = &res.initial;
  for (int round = 0; round < promotion_config.rounds; ++round) {
    PromotionResult p = promote(*current, weak, promotion_config);
    strong.insert(strong.end(), p.promoted.begin(), p.promoted.end());
    weak = p.remaining;
    res.rounds.push_back(std::move(p));
    res.retrained = Detector(detector_config, train_config.seed);
    res.retrained_state = train(res.retrained, strong, weak, retrain_config);
    current = &res.retrained;
  }
  if (!test.empty()) {
    res.retrained_eval = evaluate(detect(res.retrained, test), eval_options);
  }
  return res;
}

void write_promotion_report(const PromotionResult& result,
                            const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  auto box = [](const BBox& b) {
    return nlohmann::json::array({b.x_min, b.y_min, b.x_max, b.y_max});
  };
  for (const auto& e : result.ranking) {
    nlohmann::json j;
    j["id"] = e.id;
    j["label"] = std::string(to_string(e.label));
    j["confidence"] = e.confidence ? nlohmann::json(*e.confidence) : nlohmann::json();
    j["promoted"] = e.promoted;
    j["pseudo_box"] = e.pseudo_box ? box(*e.pseudo_box) : nlohmann::json();
    j["background_boxes"] = nlohmann::json::array();
    for (const auto& b : e.background_boxes) j["background_boxes"].push_back(box(b));
    out << j.dump() << "\n";
  }
}

}  // namespace wsod
