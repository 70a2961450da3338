#include "wsod/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>
#include <string>

namespace wsod {

namespace {

constexpr std::uint64_t kStrongTag = 0x5354524f4e47;  // "STRONG"
constexpr std::uint64_t kWeakTag = 0x5745414b;        // "WEAK"

}  // namespace

std::string_view to_string(TrainVariant v) {
  return v == TrainVariant::kCombined ? "combined" : "alternating";
}

TrainVariant parse_variant(std::string_view s) {
  if (s == "combined") return TrainVariant::kCombined;
  if (s == "alternating") return TrainVariant::kAlternating;
  throw std::invalid_argument("unknown training variant '" + std::string(s) +
                              "'");
}

std::string to_string(const AlphaSchedule& s) {
  if (s.kind == AlphaSchedule::Kind::kGradualLinear) return "gradual";
  char buf[64];
  std::snprintf(buf, sizeof buf, "static:%.17g", s.value);
  return buf;
}

AlphaSchedule parse_alpha(std::string_view s) {
  if (s == "gradual") return {};
  constexpr std::string_view prefix = "static:";
  if (s.substr(0, prefix.size()) == prefix) {
    const std::string num(s.substr(prefix.size()));
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(num, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != num.size()) {
      throw std::invalid_argument("bad alpha value in '" + std::string(s) + "'");
    }
    if (!(v >= 0.0 && v <= 1.0)) {
      throw std::invalid_argument("static alpha must lie in [0,1]");
    }
    return {AlphaSchedule::Kind::kStatic, v};
  }
  throw std::invalid_argument("alpha must be 'gradual' or 'static:VALUE', got '" +
                              std::string(s) + "'");
}

void validate(const TrainConfig& c) {
  auto fail = [](const std::string& m) {
    throw std::invalid_argument("train config: " + m);
  };
  if (c.strong_batch < 1 || c.weak_batch < 1) fail("batch sizes must be >= 1");
  if (!(c.lr > 0.0 && c.lr_strong > 0.0 && c.lr_weak > 0.0)) {
    fail("learning rates must be > 0");
  }
  if (!(c.alpha_init > 0.0 && c.alpha_init <= 1.0)) {
    fail("alpha_init must lie in (0,1]");
  }
  if (c.alpha.kind == AlphaSchedule::Kind::kStatic &&
      !(c.alpha.value >= 0.0 && c.alpha.value <= 1.0)) {
    fail("static alpha must lie in [0,1]");
  }
  if (!(c.weight_decay >= 0.0)) fail("weight_decay must be >= 0");
  if (c.iterations < 0) fail("iterations must be >= 0");
  if (c.rpn_samples < 1 || c.roi_samples < 1) fail("sample counts must be >= 1");
  if (!(c.rpn_positive_fraction > 0.0 && c.rpn_positive_fraction <= 1.0) ||
      !(c.roi_positive_fraction > 0.0 && c.roi_positive_fraction <= 1.0)) {
    fail("positive fractions must lie in (0,1]");
  }
  validate(c.assignment);
}

double alpha_at(int iteration, const TrainConfig& c) {
  if (c.alpha.kind == AlphaSchedule::Kind::kStatic) return c.alpha.value;
  if (c.iterations <= 0) return 1.0;
  const double frac =
      std::clamp(static_cast<double>(iteration) / c.iterations, 0.0, 1.0);
  return c.alpha_init + (1.0 - c.alpha_init) * frac;
}

void AdamState::reset(const nn::ParameterSet& params) {
  m.clear();
  v.clear();
  for (const auto& t : params.tensors()) {
    m.emplace_back(t.size(), 0.0f);
    v.emplace_back(t.size(), 0.0f);
  }
  steps.assign(params.count(), 0);
}

void adam_update(nn::ParameterSet& params, const nn::Gradients& grads,
                 AdamState& state, double lr, double weight_decay,
                 const std::vector<bool>& update_mask) {
  if (state.m.size() != params.count()) state.reset(params);
  if (grads.count() != params.count() ||
      (!update_mask.empty() && update_mask.size() != params.count())) {
    throw std::invalid_argument("adam_update: size mismatch");
  }
  for (std::size_t i = 0; i < params.count(); ++i) {
    if (!update_mask.empty() && !update_mask[i]) continue;
    auto& theta = params[static_cast<int>(i)].values;
    const auto& g = grads[static_cast<int>(i)];
    auto& m = state.m[i];
    auto& v = state.v[i];
    const std::int64_t t = ++state.steps[i];
    const double c1 = 1.0 - std::pow(kAdamBeta1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(kAdamBeta2, static_cast<double>(t));
    for (std::size_t k = 0; k < theta.size(); ++k) {
      const double gk = g[k];
      const double mk = kAdamBeta1 * m[k] + (1.0 - kAdamBeta1) * gk;
      const double vk = kAdamBeta2 * v[k] + (1.0 - kAdamBeta2) * gk * gk;
      m[k] = static_cast<float>(mk);
      v[k] = static_cast<float>(vk);
      const double step = (mk / c1) / (std::sqrt(vk / c2) + kAdamEps);
      const double th = theta[k];
      theta[k] = static_cast<float>(th - lr * step - lr * weight_decay * th);
    }
  }
}

std::string_view to_string(Stream s) {
  return s == Stream::kStrong ? "strong" : "weak";
}

TrainState make_train_state(const Detector& model, const TrainConfig& config) {
  TrainState s;
  s.optimizer.reset(model.params());
  s.alpha = alpha_at(0, config);
  return s;
}

namespace {

// Keeps at most `max_pos` positives and fills up to `total` with negatives,
// both drawn uniformly without replacement.
void sample_indices(std::vector<std::size_t> pos, std::vector<std::size_t> neg,
                    int total, double positive_fraction, Rng& rng,
                    std::vector<std::size_t>& out) {
  std::shuffle(pos.begin(), pos.end(), rng);
  std::shuffle(neg.begin(), neg.end(), rng);
  const auto max_pos = static_cast<std::size_t>(
      std::floor(total * positive_fraction));
  pos.resize(std::min(pos.size(), max_pos));
  const std::size_t n_neg =
      std::min(neg.size(), static_cast<std::size_t>(total) - pos.size());
  out.assign(pos.begin(), pos.end());
  out.insert(out.end(), neg.begin(), neg.begin() + n_neg);
  std::sort(out.begin(), out.end());
}

std::vector<Logits> logits_of(const RoiTrace& roi) {
  std::vector<Logits> out(roi.cls.rows);
  for (int i = 0; i < roi.cls.rows; ++i) {
    for (std::size_t k = 0; k < kNumClasses; ++k) out[i][k] = roi.cls(i, k);
  }
  return out;
}

}  // namespace

StrongLoss strong_image_gradient(const Detector& model, const ImageRecord& rec,
                                 const TrainConfig& config,
                                 const ClassWeights& weights, Rng& rng,
                                 float scale, nn::Gradients& grads) {
  if (!rec.is_strong()) {
    throw std::invalid_argument("record '" + rec.id + "' is not strongly annotated");
  }
  const ImageRecord aug =
      config.augment ? augment(rec, default_strong_policy(), rng) : rec;
  const StrongAnnotation& ann = aug.strong();

  FeatureTrace trace;
  model.forward_features(aug.image, trace);
  const auto rpn_logits = model.rpn_logits(trace);
  const auto rpn_deltas = model.rpn_deltas(trace);
  const auto& anchors = model.anchors();

  const auto anchor_labels = assign_rpn_labels(anchors, ann, config.assignment);
  std::vector<std::size_t> pos, neg, chosen;
  for (std::size_t a = 0; a < anchor_labels.size(); ++a) {
    if (anchor_labels[a] == AnchorLabel::kPositive) pos.push_back(a);
    if (anchor_labels[a] == AnchorLabel::kNegative) neg.push_back(a);
  }
  sample_indices(pos, neg, config.rpn_samples, config.rpn_positive_fraction,
                 rng, chosen);
  std::vector<char> rpn_mask(anchors.size(), 0);
  for (std::size_t a : chosen) rpn_mask[a] = 1;

  // ROI candidates: proposals plus the annotated boxes.
  std::vector<BBox> candidates = model.propose(trace).boxes();
  candidates.push_back(ann.moi_box);
  for (const BBox& b : ann.background_boxes) candidates.push_back(b);
  const auto roi_labels =
      assign_roi_classes(candidates, ann, config.assignment);
  pos.clear();
  neg.clear();
  for (std::size_t i = 0; i < roi_labels.size(); ++i) {
    if (roi_labels[i] > 0) pos.push_back(i);
    if (roi_labels[i] == 0) neg.push_back(i);
  }
  sample_indices(pos, neg, config.roi_samples, config.roi_positive_fraction, rng,
                 chosen);
  std::vector<BBox> rois;
  for (std::size_t i : chosen) rois.push_back(candidates[i]);

  RoiTrace roi;
  model.forward_rois(trace, rois, roi);
  const auto roi_logits = logits_of(roi);
  const auto roi_deltas = model.refinements(roi);

  StrongOutputs out;
  out.anchors = anchors;
  out.rpn_logits = rpn_logits;
  out.rpn_deltas = rpn_deltas;
  out.rpn_sampled = rpn_mask;
  out.rois = rois;
  out.roi_logits = roi_logits;
  out.roi_deltas = roi_deltas;
  StrongLoss loss = strong_loss(out, ann, config.assignment, weights);

  HeadGradients head;
  head.rpn_logits = loss.d_rpn_logits;
  head.rpn_deltas = loss.d_rpn_deltas;
  for (auto& g : head.rpn_logits) g *= scale;
  for (auto& d : head.rpn_deltas) {
    for (auto& g : d) g *= scale;
  }
  const int n = static_cast<int>(rois.size());
  head.roi_cls = nn::Matrix(n, static_cast<int>(kNumClasses));
  head.roi_reg = nn::Matrix(n, 4 * static_cast<int>(kNumClasses));
  for (int i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < kNumClasses; ++c) {
      head.roi_cls(i, c) = static_cast<float>(scale * loss.d_roi_logits[i][c]);
      for (int j = 0; j < 4; ++j) {
        head.roi_reg(i, 4 * c + j) =
            static_cast<float>(scale * loss.d_roi_deltas[i][c][j]);
      }
    }
  }
  model.backward(trace, &roi, head, grads);
  return loss;
}

MilLogitLoss weak_image_gradient(const Detector& model, const ImageRecord& rec,
                                 const TrainConfig& config,
                                 const ClassWeights& weights, Rng& rng,
                                 float scale, nn::Gradients& grads) {
  if (!rec.is_weak()) {
    throw std::invalid_argument("record '" + rec.id + "' is not weakly annotated");
  }
  const ImageRecord aug =
      config.augment ? augment(rec, default_weak_policy(), rng) : rec;
  FeatureTrace trace;
  model.forward_features(aug.image, trace);
  // All post-NMS proposals, before any probability threshold, so the region
  // set is never empty in practice.
  const auto boxes = model.propose(trace).boxes();
  RoiTrace roi;
  model.forward_rois(trace, boxes, roi);
  const auto logits = logits_of(roi);
  MilLogitLoss loss =
      mil_loss_from_logits(logits, aug.weak().label, config.moi, weights);
  if (!loss.moi) return loss;
  HeadGradients head;
  head.roi_cls = nn::Matrix(roi.cls.rows, static_cast<int>(kNumClasses));
  const std::size_t i = *loss.moi;
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    head.roi_cls(static_cast<int>(i), c) =
        static_cast<float>(scale * loss.d_logits[i][c]);
  }
  model.backward(trace, &roi, head, grads);
  return loss;
}

namespace {

void accumulate(LossRow& row, const StrongLoss& l, double w) {
  row.rpn_cls += w * l.rpn_cls;
  row.rpn_reg += w * l.rpn_reg;
  row.frc_cls += w * l.frc_cls;
  row.frc_reg += w * l.frc_reg;
}

std::vector<bool> all_but_regression(const nn::ParameterSet& params) {
  std::vector<bool> mask;
  for (const auto& t : params.tensors()) mask.push_back(!t.frcnn_reg);
  return mask;
}

}  // namespace

LossRow step_combined(Detector& model, TrainState& state,
                      const TrainConfig& config,
                      std::span<const ImageRecord* const> strong_batch,
                      std::span<const ImageRecord* const> weak_batch,
                      const ClassWeights& weights, Rng& strong_rng,
                      Rng& weak_rng, const StepOptions& options) {
  if (strong_batch.empty() || weak_batch.empty()) {
    throw std::invalid_argument("step_combined needs both batches");
  }
  const double alpha = alpha_at(state.iteration, config);
  state.alpha = alpha;
  LossRow row;
  row.iteration = state.iteration;
  row.alpha = alpha;

  nn::Gradients gs(model.params());
  nn::Gradients gw(model.params());
  const double ws = 1.0 / static_cast<double>(strong_batch.size());
  for (const ImageRecord* r : strong_batch) {
    accumulate(row, strong_image_gradient(model, *r, config, weights, strong_rng,
                                          static_cast<float>(ws), gs),
               ws);
  }
  const double ww = 1.0 / static_cast<double>(weak_batch.size());
  for (const ImageRecord* r : weak_batch) {
    row.ws += ww * weak_image_gradient(model, *r, config, weights, weak_rng,
                                       static_cast<float>(alpha * ww), gw)
                       .value;
  }
  row.total = row.strong() + alpha * row.ws;

  if (options.zero_strong_gradient) gs.zero();
  if (options.zero_weak_gradient) gw.zero();
  const auto& params = model.params();
  for (std::size_t i = 0; i < params.count(); ++i) {
    if (params[static_cast<int>(i)].frcnn_reg) continue;  // strong-only
    auto& dst = gs[static_cast<int>(i)];
    const auto& src = gw[static_cast<int>(i)];
    for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
  }
  const std::vector<bool> mask = options.zero_strong_gradient
                                     ? all_but_regression(params)
                                     : std::vector<bool>{};
  adam_update(model.params(), gs, state.optimizer, config.lr,
              config.weight_decay, mask);
  state.step_log.push_back(Stream::kStrong);
  state.step_log.push_back(Stream::kWeak);
  return row;
}

LossRow step_alternating(Detector& model, TrainState& state,
                         const TrainConfig& config,
                         std::span<const ImageRecord* const> batch,
                         Stream stream, const ClassWeights& weights, Rng& rng,
                         const StepOptions& options) {
  if (batch.empty()) throw std::invalid_argument("step_alternating: empty batch");
  const double alpha = alpha_at(state.iteration, config);
  state.alpha = alpha;
  LossRow row;
  row.iteration = state.iteration;
  row.alpha = alpha;
  nn::Gradients g(model.params());
  const double w = 1.0 / static_cast<double>(batch.size());
  if (stream == Stream::kStrong) {
    for (const ImageRecord* r : batch) {
      accumulate(row,
                 strong_image_gradient(model, *r, config, weights, rng,
                                       static_cast<float>(w), g),
                 w);
    }
    if (options.zero_strong_gradient) g.zero();
    row.total = row.strong();
    adam_update(model.params(), g, state.optimizer, config.lr_strong,
                config.weight_decay);
  } else {
    for (const ImageRecord* r : batch) {
      row.ws += w * weak_image_gradient(model, *r, config, weights, rng,
                                        static_cast<float>(alpha * w), g)
                        .value;
    }
    if (options.zero_weak_gradient) g.zero();
    row.total = alpha * row.ws;
    adam_update(model.params(), g, state.optimizer, config.lr_weak,
                config.weight_decay, all_but_regression(model.params()));
  }
  state.step_log.push_back(stream);
  return row;
}

ClassWeights class_weights_for(std::span<const ImageRecord> strong,
                               std::span<const ImageRecord> weak,
                               bool balance) {
  ClassWeights w;
  if (!balance) return w;
  std::vector<DiagnosisLabel> labels;
  for (const auto& r : strong) labels.push_back(r.label());
  const auto region = inverse_frequency_weights(labels);
  w.region = {1.0, region[1], region[2]};
  labels.clear();
  for (const auto& r : weak) labels.push_back(r.label());
  w.image = inverse_frequency_weights(labels);
  return w;
}

namespace {

// Visits records in a fresh random order each epoch.
class EpochSampler {
 public:
  EpochSampler(std::size_t n, Rng rng) : rng_(std::move(rng)), order_(n) {
    for (std::size_t i = 0; i < n; ++i) order_[i] = i;
    pos_ = n;
  }
  std::size_t next() {
    if (pos_ >= order_.size()) {
      std::shuffle(order_.begin(), order_.end(), rng_);
      pos_ = 0;
    }
    return order_[pos_++];
  }

 private:
  Rng rng_;
  std::vector<std::size_t> order_;
  std::size_t pos_ = 0;
};

std::vector<const ImageRecord*> draw(EpochSampler& s,
                                     std::span<const ImageRecord> records,
                                     int n) {
  std::vector<const ImageRecord*> out;
  for (int i = 0; i < n; ++i) out.push_back(&records[s.next()]);
  return out;
}

void check_inputs(std::span<const ImageRecord> strong,
                  std::span<const ImageRecord> weak) {
  if (strong.empty()) {
    throw std::invalid_argument(
        "training needs at least one strongly annotated record");
  }
  for (const auto& r : strong) {
    if (!r.is_strong()) {
      throw std::invalid_argument("record '" + r.id + "' in the strong set is weak");
    }
  }
  for (const auto& r : weak) {
    if (!r.is_weak()) {
      throw std::invalid_argument("record '" + r.id + "' in the weak set is strong");
    }
  }
}

}  // namespace

TrainState train(Detector& model, std::span<const ImageRecord> strong,
                 std::span<const ImageRecord> weak, const TrainConfig& config) {
  validate(config);
  check_inputs(strong, weak);
  const ClassWeights weights =
      class_weights_for(strong, weak, config.balance_classes);
  TrainState state = make_train_state(model, config);
  EpochSampler strong_sampler(strong.size(), make_rng(config.seed, {kStrongTag}));
  EpochSampler weak_sampler(weak.size(), make_rng(config.seed, {kWeakTag}));

  for (int it = 0; it < config.iterations; ++it) {
    state.iteration = it;
    Rng strong_rng = make_rng(config.seed, {kStrongTag, static_cast<std::uint64_t>(it)});
    const auto sb = draw(strong_sampler, strong, config.strong_batch);
    LossRow row;
    if (weak.empty()) {
      row = step_alternating(model, state, config, sb, Stream::kStrong, weights,
                             strong_rng);
      row.alpha = state.alpha;
    } else {
      Rng weak_rng = make_rng(config.seed, {kWeakTag, static_cast<std::uint64_t>(it)});
      const auto wb = draw(weak_sampler, weak, config.weak_batch);
      if (config.variant == TrainVariant::kCombined) {
        row = step_combined(model, state, config, sb, wb, weights, strong_rng,
                            weak_rng);
      } else {
        row = step_alternating(model, state, config, sb, Stream::kStrong,
                               weights, strong_rng);
        const LossRow w = step_alternating(model, state, config, wb,
                                           Stream::kWeak, weights, weak_rng);
        row.ws = w.ws;
        row.total = row.strong() + w.alpha * w.ws;
      }
    }
    state.history.push_back(row);
  }
  state.iteration = config.iterations;
  state.alpha = alpha_at(config.iterations, config);
  return state;
}

TrainState train(Detector& model, const DatasetManifest& manifest,
                 const TrainConfig& config) {
  const auto strong = manifest.select(Split::kTrain, Supervision::kStrong);
  const auto weak = manifest.select(Split::kTrain, Supervision::kWeak);
  return train(model, strong, weak, config);
}

TrainState train_strong_only(Detector& model,
                             std::span<const ImageRecord> strong,
                             const TrainConfig& config) {
  validate(config);
  check_inputs(strong, {});
  const ClassWeights weights =
      class_weights_for(strong, {}, config.balance_classes);
  TrainState state = make_train_state(model, config);
  EpochSampler sampler(strong.size(), make_rng(config.seed, {kStrongTag}));
  for (int it = 0; it < config.iterations; ++it) {
    state.iteration = it;
    Rng rng = make_rng(config.seed, {kStrongTag, static_cast<std::uint64_t>(it)});
    const auto batch = draw(sampler, strong, config.strong_batch);
    nn::Gradients g(model.params());
    LossRow row;
    row.iteration = it;
    const double w = 1.0 / static_cast<double>(batch.size());
    for (const ImageRecord* r : batch) {
      accumulate(row,
                 strong_image_gradient(model, *r, config, weights, rng,
                                       static_cast<float>(w), g),
                 w);
    }
    row.total = row.strong();
    adam_update(model.params(), g, state.optimizer, config.lr_strong,
                config.weight_decay);
    state.step_log.push_back(Stream::kStrong);
    state.history.push_back(row);
  }
  state.iteration = config.iterations;
  return state;
}

void write_loss_csv(const std::vector<LossRow>& history,
                    const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "iteration,L_rpn_cls,L_rpn_reg,L_frc_cls,L_frc_reg,L_ws,alpha\n";
  char buf[256];
  for (const LossRow& r : history) {
    std::snprintf(buf, sizeof buf, "%d,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g\n",
                  r.iteration, r.rpn_cls, r.rpn_reg, r.frc_cls, r.frc_reg, r.ws,
                  r.alpha);
    out << buf;
  }
}

}  // namespace wsod
