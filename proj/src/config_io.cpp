#include "wsod/config_io.hpp"

#include <fstream>
#include <set>
#include <sstream>

namespace wsod {

namespace {

// Reads keys of one JSON object into existing defaults and rejects keys it
// was never asked about.
class Reader {
 public:
  Reader(const Json& j, std::string ctx) : j_(j), ctx_(std::move(ctx)) {
    if (!j_.is_object()) throw ConfigError(ctx_ + ": expected a JSON object");
  }

  template <class T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    const auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      out = it->template get<T>();
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(ctx_ + "." + key + ": " + e.what());
    }
  }

  void get(const char* key, Range& out) {
    std::vector<double> v{out.lo, out.hi};
    get(key, v);
    if (v.size() != 2) throw ConfigError(ctx_ + "." + key + ": expected [lo, hi]");
    out = {v[0], v[1]};
  }

  template <class F>
  void get_string(const char* key, F&& apply) {
    std::string s;
    seen_.insert(key);
    const auto it = j_.find(key);
    if (it == j_.end()) return;
    if (!it->is_string()) throw ConfigError(ctx_ + "." + key + ": expected a string");
    s = it->template get<std::string>();
    try {
      apply(s);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(ctx_ + "." + key + ": " + e.what());
    }
  }

  const Json* object(const char* key) {
    seen_.insert(key);
    const auto it = j_.find(key);
    if (it == j_.end() || it->is_null()) return nullptr;
    return &*it;
  }

  void finish() const {
    for (const auto& [k, v] : j_.items()) {
      if (!seen_.count(k)) throw ConfigError(ctx_ + ": unknown key '" + k + "'");
    }
  }

  const std::string& ctx() const { return ctx_; }

 private:
  const Json& j_;
  std::string ctx_;
  std::set<std::string> seen_;
};

Json range(const Range& r) { return Json::array({r.lo, r.hi}); }

Json appearance(const MassAppearance& a) {
  return {{"irregularity", range(a.irregularity)},
          {"orientation_mean_deg", a.orientation_mean_deg},
          {"orientation_std_deg", a.orientation_std_deg},
          {"boundary_blur", range(a.boundary_blur)},
          {"contrast", range(a.contrast)}};
}

MassAppearance appearance_from(const Json& j, MassAppearance a,
                               const std::string& ctx) {
  Reader r(j, ctx);
  r.get("irregularity", a.irregularity);
  r.get("orientation_mean_deg", a.orientation_mean_deg);
  r.get("orientation_std_deg", a.orientation_std_deg);
  r.get("boundary_blur", a.boundary_blur);
  r.get("contrast", a.contrast);
  r.finish();
  return a;
}

template <class F>
auto wrap(const std::string& what, F&& f) {
  try {
    return f();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(what + ": " + e.what());
  }
}

}  // namespace

Json to_json(const SyntheticConfig& c) {
  return {{"image_size_min", c.image_size_min},
          {"image_size_max", c.image_size_max},
          {"mass_count_probs", c.mass_count_probs},
          {"size_ratio", range(c.size_ratio)},
          {"aspect", range(c.aspect)},
          {"benign", appearance(c.benign)},
          {"malignant", appearance(c.malignant)},
          {"speckle", c.speckle},
          {"class_mix", c.class_mix},
          {"num_strong_train", c.num_strong_train},
          {"num_weak_train", c.num_weak_train},
          {"num_test", c.num_test},
          {"num_normal_test", c.num_normal_test},
          {"images_per_group", range(c.images_per_group)},
          {"background_boxes", range(c.background_boxes)},
          {"seed", c.seed}};
}

SyntheticConfig synthetic_config_from_json(const Json& j) {
  SyntheticConfig c;
  Reader r(j, "data");
  r.get("image_size_min", c.image_size_min);
  r.get("image_size_max", c.image_size_max);
  r.get("mass_count_probs", c.mass_count_probs);
  r.get("size_ratio", c.size_ratio);
  r.get("aspect", c.aspect);
  if (const Json* a = r.object("benign")) {
    c.benign = appearance_from(*a, c.benign, "data.benign");
  }
  if (const Json* a = r.object("malignant")) {
    c.malignant = appearance_from(*a, c.malignant, "data.malignant");
  }
  r.get("speckle", c.speckle);
  r.get("class_mix", c.class_mix);
  r.get("num_strong_train", c.num_strong_train);
  r.get("num_weak_train", c.num_weak_train);
  r.get("num_test", c.num_test);
  r.get("num_normal_test", c.num_normal_test);
  r.get("images_per_group", c.images_per_group);
  r.get("background_boxes", c.background_boxes);
  r.get("seed", c.seed);
  r.finish();
  wrap("data", [&] { validate(c); return 0; });
  return c;
}

Json to_json(const DetectorConfig& c) {
  return {{"input_size", c.input_size},
          {"backbone", std::string(to_string(c.backbone))},
          {"feature_stride", c.feature_stride},
          {"anchor_scales", c.anchor_scales},
          {"anchor_ratios", c.anchor_ratios},
          {"pre_nms_top_n", c.pre_nms_top_n},
          {"post_nms_top_n", c.post_nms_top_n},
          {"rpn_nms_iou", c.rpn_nms_iou},
          {"min_proposal_size", c.min_proposal_size},
          {"roi_pool", c.roi_pool},
          {"hidden_width", c.hidden_width},
          {"num_classes", c.num_classes}};
}

DetectorConfig detector_config_from_json(const Json& j) {
  DetectorConfig c;
  Reader r(j, "detector");
  r.get("input_size", c.input_size);
  r.get_string("backbone", [&](const std::string& s) { c.backbone = parse_backbone(s); });
  r.get("feature_stride", c.feature_stride);
  r.get("anchor_scales", c.anchor_scales);
  r.get("anchor_ratios", c.anchor_ratios);
  r.get("pre_nms_top_n", c.pre_nms_top_n);
  r.get("post_nms_top_n", c.post_nms_top_n);
  r.get("rpn_nms_iou", c.rpn_nms_iou);
  r.get("min_proposal_size", c.min_proposal_size);
  r.get("roi_pool", c.roi_pool);
  r.get("hidden_width", c.hidden_width);
  r.get("num_classes", c.num_classes);
  r.finish();
  wrap("detector", [&] { validate(c); return 0; });
  return c;
}

Json to_json(const TrainConfig& c) {
  return {{"strong_batch", c.strong_batch},
          {"weak_batch", c.weak_batch},
          {"lr", c.lr},
          {"lr_strong", c.lr_strong},
          {"lr_weak", c.lr_weak},
          {"alpha_init", c.alpha_init},
          {"alpha", to_string(c.alpha)},
          {"variant", std::string(to_string(c.variant))},
          {"weight_decay", c.weight_decay},
          {"iterations", c.iterations},
          {"moi", std::string(to_string(c.moi))},
          {"assignment",
           {{"positive_iou", c.assignment.positive_iou},
            {"negative", std::string(to_string(c.assignment.negative))},
            {"background_overlap", c.assignment.background_overlap},
            {"negative_iou", c.assignment.negative_iou},
            {"best_match_positive", c.assignment.best_match_positive}}},
          {"rpn_samples", c.rpn_samples},
          {"rpn_positive_fraction", c.rpn_positive_fraction},
          {"roi_samples", c.roi_samples},
          {"roi_positive_fraction", c.roi_positive_fraction},
          {"augment", c.augment},
          {"balance_classes", c.balance_classes},
          {"seed", c.seed}};
}

TrainConfig train_config_from_json(const Json& j) {
  TrainConfig c;
  Reader r(j, "train");
  r.get("strong_batch", c.strong_batch);
  r.get("weak_batch", c.weak_batch);
  r.get("lr", c.lr);
  r.get("lr_strong", c.lr_strong);
  r.get("lr_weak", c.lr_weak);
  r.get("alpha_init", c.alpha_init);
  r.get_string("alpha", [&](const std::string& s) { c.alpha = parse_alpha(s); });
  r.get_string("variant", [&](const std::string& s) { c.variant = parse_variant(s); });
  r.get("weight_decay", c.weight_decay);
  r.get("iterations", c.iterations);
  r.get_string("moi", [&](const std::string& s) { c.moi = parse_moi_criterion(s); });
  if (const Json* a = r.object("assignment")) {
    Reader ra(*a, "train.assignment");
    ra.get("positive_iou", c.assignment.positive_iou);
    ra.get_string("negative", [&](const std::string& s) {
      c.assignment.negative = parse_negative_rule(s);
    });
    ra.get("background_overlap", c.assignment.background_overlap);
    ra.get("negative_iou", c.assignment.negative_iou);
    ra.get("best_match_positive", c.assignment.best_match_positive);
    ra.finish();
  }
  r.get("rpn_samples", c.rpn_samples);
  r.get("rpn_positive_fraction", c.rpn_positive_fraction);
  r.get("roi_samples", c.roi_samples);
  r.get("roi_positive_fraction", c.roi_positive_fraction);
  r.get("augment", c.augment);
  r.get("balance_classes", c.balance_classes);
  r.get("seed", c.seed);
  r.finish();
  wrap("train", [&] { validate(c); return 0; });
  return c;
}

Json to_json(const PromotionConfig& c) {
  return {{"fraction", c.fraction},
          {"background_boxes", c.background_boxes},
          {"max_attempts", c.max_attempts},
          {"prob_threshold", c.prob_threshold},
          {"nms_iou", c.nms_iou},
          {"rounds", c.rounds},
          {"retrain_iterations", c.retrain_iterations},
          {"seed", c.seed}};
}

PromotionConfig promotion_config_from_json(const Json& j) {
  PromotionConfig c;
  Reader r(j, "promotion");
  r.get("fraction", c.fraction);
  r.get("background_boxes", c.background_boxes);
  r.get("max_attempts", c.max_attempts);
  r.get("prob_threshold", c.prob_threshold);
  r.get("nms_iou", c.nms_iou);
  r.get("rounds", c.rounds);
  r.get("retrain_iterations", c.retrain_iterations);
  r.get("seed", c.seed);
  r.finish();
  wrap("promotion", [&] { validate(c); return 0; });
  return c;
}

Json to_json(const EvalOptions& c) {
  return {{"prob_threshold", c.prob_threshold},
          {"nms_iou", c.nms_iou},
          {"froc_points", c.froc_points},
          {"resamples", c.resamples},
          {"ci_level", c.ci_level},
          {"bootstrap_seed", c.bootstrap_seed}};
}

EvalOptions eval_options_from_json(const Json& j) {
  EvalOptions c;
  Reader r(j, "eval");
  r.get("prob_threshold", c.prob_threshold);
  r.get("nms_iou", c.nms_iou);
  r.get("froc_points", c.froc_points);
  r.get("resamples", c.resamples);
  r.get("ci_level", c.ci_level);
  r.get("bootstrap_seed", c.bootstrap_seed);
  r.finish();
  wrap("eval", [&] { validate(c); return 0; });
  return c;
}

void validate(const ExperimentSpec& s) {
  if (s.seeds.empty()) throw ConfigError("experiment: seed list is empty");
  wrap("detector", [&] { validate(s.detector); return 0; });
  wrap("train", [&] { validate(s.train); return 0; });
  wrap("eval", [&] { validate(s.eval); return 0; });
  if (s.data) wrap("data", [&] { validate(*s.data); return 0; });
  if (s.promotion) wrap("promotion", [&] { validate(*s.promotion); return 0; });
  for (int v : s.sweep_strong) {
    if (v < 1) throw ConfigError("sweep_strong entries must be >= 1");
  }
  for (int v : s.sweep_weak) {
    if (v < 0) throw ConfigError("sweep_weak entries must be >= 0");
  }
}

Json to_json(const ExperimentSpec& s) {
  Json j;
  if (s.data) j["data"] = to_json(*s.data);
  if (!s.manifest.empty()) j["manifest"] = s.manifest;
  j["detector"] = to_json(s.detector);
  j["train"] = to_json(s.train);
  if (s.promotion) j["promotion"] = to_json(*s.promotion);
  j["eval"] = to_json(s.eval);
  if (!s.output_dir.empty()) j["output_dir"] = s.output_dir;
  j["seeds"] = s.seeds;
  if (!s.sweep_strong.empty()) j["sweep_strong"] = s.sweep_strong;
  if (!s.sweep_weak.empty()) j["sweep_weak"] = s.sweep_weak;
  return j;
}

ExperimentSpec experiment_from_json(const Json& j) {
  ExperimentSpec s;
  Reader r(j, "config");
  if (const Json* d = r.object("data")) s.data = synthetic_config_from_json(*d);
  r.get("manifest", s.manifest);
  if (const Json* d = r.object("detector")) s.detector = detector_config_from_json(*d);
  if (const Json* d = r.object("train")) s.train = train_config_from_json(*d);
  if (const Json* d = r.object("promotion")) {
    s.promotion = promotion_config_from_json(*d);
  }
  if (const Json* d = r.object("eval")) s.eval = eval_options_from_json(*d);
  r.get("output_dir", s.output_dir);
  r.get("seeds", s.seeds);
  r.get("sweep_strong", s.sweep_strong);
  r.get("sweep_weak", s.sweep_weak);
  r.finish();
  validate(s);
  return s;
}

Json load_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read " + path.string());
  try {
    return Json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

void save_json(const Json& j, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(2) << "\n";
}

ExperimentSpec load_experiment(const std::filesystem::path& path) {
  return experiment_from_json(load_json(path));
}

Json to_json(const BBox& b) {
  return Json::array({b.x_min, b.y_min, b.x_max, b.y_max});
}

Json to_json(const BootstrapReport& r) {
  Json j{{"estimate", r.estimate},
         {"low", r.low},
         {"high", r.high},
         {"level", r.level},
         {"resamples", r.resamples}};
  if (r.p_value) j["p_value"] = *r.p_value;
  return j;
}

Json to_json(const EvalReport& r) {
  Json j;
  j["num_images"] = r.num_images;
  j["num_lesion_images"] = r.image_ids.size();
  j["num_normal_images"] = r.num_normal;
  j["corloc"] = r.corloc;
  j["corloc_ci"] = to_json(r.corloc_ci);
  j["fp_per_normal"] = r.fp_per_normal ? Json(*r.fp_per_normal) : Json();
  Json froc = Json::array();
  for (const auto& p : r.froc) {
    froc.push_back({{"threshold", p.threshold},
                    {"fp_per_image", p.fp_per_image},
                    {"sensitivity", p.sensitivity}});
  }
  j["froc"] = std::move(froc);
  Json per = Json::array();
  for (std::size_t i = 0; i < r.image_ids.size(); ++i) {
    per.push_back({{"id", r.image_ids[i]}, {"correct", r.indicators[i]}});
  }
  j["per_image"] = std::move(per);
  return j;
}

namespace {

Json annotation_json(const Annotation& a) {
  if (const auto* s = std::get_if<StrongAnnotation>(&a)) {
    Json bg = Json::array();
    for (const auto& b : s->background_boxes) bg.push_back(to_json(b));
    return {{"supervision", "strong"},
            {"label", std::string(to_string(s->moi_label))},
            {"moi_box", to_json(s->moi_box)},
            {"background_boxes", std::move(bg)}};
  }
  return {{"supervision", "weak"},
          {"label", std::string(to_string(std::get<WeakAnnotation>(a).label))}};
}

BBox box_from(const Json& j) {
  const auto v = j.get<std::vector<double>>();
  if (v.size() != 4) throw std::invalid_argument("box needs 4 numbers");
  return make_box(v[0], v[1], v[2], v[3]);
}

}  // namespace

Json detections_to_json(std::span<const DetectionResult> results) {
  Json out = Json::array();
  for (const auto& r : results) {
    Json regions = Json::array();
    for (const auto& p : r.regions) {
      regions.push_back({{"box", to_json(p.box)},
                         {"probs", p.probs},
                         {"objectness", p.objectness}});
    }
    out.push_back({{"id", r.image_id},
                   {"ground_truth", annotation_json(r.ground_truth)},
                   {"regions", std::move(regions)}});
  }
  return out;
}

std::vector<DetectionResult> detections_from_json(const Json& j) {
  std::vector<DetectionResult> out;
  try {
    for (const auto& e : j) {
      DetectionResult r;
      r.image_id = e.at("id").get<std::string>();
      const Json& gt = e.at("ground_truth");
      const auto label = parse_diagnosis(gt.at("label").get<std::string>());
      if (gt.at("supervision").get<std::string>() == "strong") {
        StrongAnnotation s;
        s.moi_box = box_from(gt.at("moi_box"));
        s.moi_label = label;
        for (const auto& b : gt.at("background_boxes")) {
          s.background_boxes.push_back(box_from(b));
        }
        r.ground_truth = s;
      } else {
        r.ground_truth = WeakAnnotation{label};
      }
      for (const auto& p : e.at("regions")) {
        RegionPrediction rp;
        rp.box = box_from(p.at("box"));
        rp.probs = p.at("probs").get<ProbTriple>();
        rp.objectness = p.at("objectness").get<double>();
        r.regions.push_back(rp);
      }
      out.push_back(std::move(r));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("detections file: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("detections file: ") + e.what());
  }
  return out;
}

}  // namespace wsod
