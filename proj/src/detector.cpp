#include "wsod/detector.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "wsod/nms.hpp"

namespace wsod {

using nn::ParamGroup;

std::string_view to_string(BackbonePreset p) {
  return p == BackbonePreset::kSmall ? "small" : "large";
}

BackbonePreset parse_backbone(std::string_view s) {
  if (s == "small") return BackbonePreset::kSmall;
  if (s == "large") return BackbonePreset::kLarge;
  throw std::invalid_argument("unknown backbone preset '" + std::string(s) +
                              "'");
}

std::vector<int> DetectorConfig::block_channels() const {
  if (backbone == BackbonePreset::kSmall) return {8, 16, 32, 32};
  return {8, 16, 32, 32, 32, 32, 32, 32};
}

void validate(const DetectorConfig& c) {
  auto fail = [](const std::string& m) {
    throw std::invalid_argument("detector config: " + m);
  };
  if (c.feature_stride < 1 || (c.feature_stride & (c.feature_stride - 1))) {
    fail("feature_stride must be a power of two");
  }
  const int pools = static_cast<int>(std::log2(c.feature_stride));
  if (pools > static_cast<int>(c.block_channels().size())) {
    fail("feature_stride needs more pooling stages than blocks");
  }
  if (c.input_size < c.feature_stride || c.input_size % c.feature_stride) {
    fail("input_size must be a multiple of feature_stride");
  }
  if (c.anchor_scales.empty() || c.anchor_ratios.empty()) {
    fail("at least one anchor shape is required");
  }
  for (double s : c.anchor_scales) {
    if (s <= 0.0) fail("anchor scales must be positive");
  }
  for (double r : c.anchor_ratios) {
    if (r <= 0.0) fail("anchor ratios must be positive");
  }
  if (c.post_nms_top_n < 1 || c.post_nms_top_n > c.pre_nms_top_n) {
    fail("need 1 <= post_nms_top_n <= pre_nms_top_n");
  }
  if (!(c.rpn_nms_iou > 0.0 && c.rpn_nms_iou < 1.0)) {
    fail("rpn_nms_iou must lie in (0,1)");
  }
  if (c.roi_pool < 1 || c.hidden_width < 1) fail("roi_pool/hidden_width < 1");
  if (c.num_classes != static_cast<int>(kNumClasses)) {
    fail("num_classes must be 3 (background, benign, malignant)");
  }
}

std::vector<BBox> ProposalSet::boxes() const {
  std::vector<BBox> out;
  out.reserve(items.size());
  for (const auto& p : items) out.push_back(p.box);
  return out;
}

nn::Tensor image_to_tensor(const GrayImage& image) {
  nn::Tensor t(1, image.height, image.width);
  for (std::size_t i = 0; i < image.pixels.size(); ++i) {
    t.data[i] = (static_cast<float>(image.pixels[i]) - 128.0f) / 64.0f;
  }
  return t;
}

std::array<double, kNumClasses> softmax(std::span<const double> logits) {
  std::array<double, kNumClasses> p{};
  const double m = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (std::size_t i = 0; i < kNumClasses; ++i) {
    p[i] = std::exp(logits[i] - m);
    z += p[i];
  }
  for (auto& v : p) v /= z;
  return p;
}

Detector::Detector(const DetectorConfig& config, std::uint64_t seed)
    : config_(config), seed_(seed) {
  validate(config_);
  const auto channels = config_.block_channels();
  const int pools = static_cast<int>(std::log2(config_.feature_stride));
  int cin = 1;
  for (std::size_t b = 0; b < channels.size(); ++b) {
    const std::string base = "backbone.block" + std::to_string(b + 1);
    Stage first{nn::Conv2d::create(params_, base + ".conv1", ParamGroup::kConv,
                                   cin, channels[b], 3, true),
                false};
    Stage second{nn::Conv2d::create(params_, base + ".conv2",
                                    ParamGroup::kConv, channels[b],
                                    channels[b], 3, true),
                 static_cast<int>(b) < pools};
    backbone_.push_back(first);
    backbone_.push_back(second);
    cin = channels[b];
  }
  const int feat = cin;
  const int A = config_.num_anchor_shapes();
  rpn_conv_ =
      nn::Conv2d::create(params_, "rpn.conv", ParamGroup::kRpn, feat, feat, 3, true);
  rpn_cls_ =
      nn::Conv2d::create(params_, "rpn.cls", ParamGroup::kRpn, feat, A, 1, false);
  rpn_reg_ = nn::Conv2d::create(params_, "rpn.reg", ParamGroup::kRpn, feat,
                                4 * A, 1, false);
  roi_align_.pooled = config_.roi_pool;
  roi_align_.sampling = 2;
  roi_align_.stride = config_.feature_stride;
  const int pooled = feat * config_.roi_pool * config_.roi_pool;
  const int hid = config_.hidden_width;
  fc1_ = nn::Linear::create(params_, "frcnn.fc1", ParamGroup::kFrcnn, pooled,
                            hid, true);
  fc2_ = nn::Linear::create(params_, "frcnn.fc2", ParamGroup::kFrcnn, hid, hid,
                            true);
  cls_ = nn::Linear::create(params_, "frcnn.cls", ParamGroup::kFrcnn, hid,
                            static_cast<int>(kNumClasses), false);
  reg_ = nn::Linear::create(params_, "frcnn.reg", ParamGroup::kFrcnn, hid,
                            4 * static_cast<int>(kNumClasses), false,
                            /*frcnn_reg=*/true);

  Rng rng = make_rng(seed_, {0x696e6974});
  auto he = [&](int weight, int fan_in) {
    nn::init_normal(params_[weight], std::sqrt(2.0 / fan_in), rng);
  };
  for (const Stage& s : backbone_) he(s.conv.weight, s.conv.cin * 9);
  he(rpn_conv_.weight, feat * 9);
  nn::init_normal(params_[rpn_cls_.weight], 0.01, rng);
  nn::init_normal(params_[rpn_reg_.weight], 0.01, rng);
  he(fc1_.weight, pooled);
  he(fc2_.weight, hid);
  nn::init_normal(params_[cls_.weight], 0.01, rng);
  nn::init_normal(params_[reg_.weight], 0.001, rng);

  anchors_ = generate_anchors(config_.feature_size(), config_.feature_size(),
                              config_.feature_stride, config_.anchor_scales,
                              config_.anchor_ratios);
}

void Detector::forward_features(const GrayImage& image,
                                FeatureTrace& trace) const {
  if (image.width != config_.input_size || image.height != config_.input_size) {
    throw std::invalid_argument(
        "detector: image is " + std::to_string(image.width) + "x" +
        std::to_string(image.height) + ", expected " +
        std::to_string(config_.input_size) + "x" +
        std::to_string(config_.input_size));
  }
  trace.acts.clear();
  trace.pool_argmax.clear();
  trace.acts.push_back(image_to_tensor(image));
  for (const Stage& s : backbone_) {
    nn::Tensor out;
    s.conv.forward(params_, trace.acts.back(), out);
    trace.acts.push_back(std::move(out));
    if (s.pool_after) {
      nn::Tensor pooled;
      std::vector<std::int32_t> argmax;
      nn::maxpool2_forward(trace.acts.back(), pooled, argmax);
      trace.acts.push_back(std::move(pooled));
      trace.pool_argmax.push_back(std::move(argmax));
    }
  }
  rpn_conv_.forward(params_, trace.feature(), trace.rpn_hidden);
  rpn_cls_.forward(params_, trace.rpn_hidden, trace.rpn_cls);
  rpn_reg_.forward(params_, trace.rpn_hidden, trace.rpn_reg);
}

std::vector<double> Detector::rpn_logits(const FeatureTrace& trace) const {
  const int A = config_.num_anchor_shapes();
  const nn::Tensor& t = trace.rpn_cls;
  std::vector<double> out(anchors_.size());
  std::size_t a = 0;
  for (int y = 0; y < t.h; ++y) {
    for (int x = 0; x < t.w; ++x) {
      for (int k = 0; k < A; ++k) out[a++] = t.at(k, y, x);
    }
  }
  return out;
}

std::vector<Deltas> Detector::rpn_deltas(const FeatureTrace& trace) const {
  const int A = config_.num_anchor_shapes();
  const nn::Tensor& t = trace.rpn_reg;
  std::vector<Deltas> out(anchors_.size());
  std::size_t a = 0;
  for (int y = 0; y < t.h; ++y) {
    for (int x = 0; x < t.w; ++x) {
      for (int k = 0; k < A; ++k, ++a) {
        for (int j = 0; j < 4; ++j) out[a][j] = t.at(4 * k + j, y, x);
      }
    }
  }
  return out;
}

ProposalSet Detector::propose(const FeatureTrace& trace) const {
  const auto logits = rpn_logits(trace);
  const auto deltas = rpn_deltas(trace);
  const double size = config_.input_size;
  std::vector<std::size_t> cand;
  std::vector<BBox> boxes(anchors_.size());
  for (std::size_t a = 0; a < anchors_.size(); ++a) {
    boxes[a] = clip(decode_box(anchors_[a], deltas[a]), size, size);
    if (boxes[a].width() >= config_.min_proposal_size &&
        boxes[a].height() >= config_.min_proposal_size) {
      cand.push_back(a);
    }
  }
  std::stable_sort(cand.begin(), cand.end(), [&](std::size_t i, std::size_t j) {
    return logits[i] > logits[j];
  });
  if (cand.size() > static_cast<std::size_t>(config_.pre_nms_top_n)) {
    cand.resize(config_.pre_nms_top_n);
  }
  std::vector<BBox> cand_boxes;
  std::vector<double> cand_scores;
  for (std::size_t a : cand) {
    cand_boxes.push_back(boxes[a]);
    cand_scores.push_back(logits[a]);
  }
  ProposalSet out;
  for (std::size_t i : nms_indices(cand_boxes, cand_scores, config_.rpn_nms_iou,
                                   config_.post_nms_top_n)) {
    const std::size_t a = cand[i];
    out.items.push_back(
        {boxes[a], 1.0 / (1.0 + std::exp(-logits[a])), static_cast<int>(a)});
  }
  return out;
}

void Detector::forward_rois(const FeatureTrace& trace,
                            std::span<const BBox> boxes, RoiTrace& roi) const {
  roi.boxes.assign(boxes.begin(), boxes.end());
  roi_align_.forward(trace.feature(), boxes, roi.pooled);
  fc1_.forward(params_, roi.pooled, roi.hidden1);
  fc2_.forward(params_, roi.hidden1, roi.hidden2);
  cls_.forward(params_, roi.hidden2, roi.cls);
  reg_.forward(params_, roi.hidden2, roi.reg);
}

std::vector<ClassDeltas> Detector::refinements(const RoiTrace& roi) const {
  std::vector<ClassDeltas> out(roi.boxes.size());
  for (int i = 0; i < roi.reg.rows; ++i) {
    for (std::size_t c = 0; c < kNumClasses; ++c) {
      for (int j = 0; j < 4; ++j) out[i][c][j] = roi.reg(i, 4 * c + j);
    }
  }
  return out;
}

std::vector<RegionPrediction> Detector::predictions(
    const RoiTrace& roi, std::span<const double> objectness) const {
  const double size = config_.input_size;
  const auto refine = refinements(roi);
  std::vector<RegionPrediction> out(roi.boxes.size());
  for (int i = 0; i < roi.cls.rows; ++i) {
    const double logits[3] = {roi.cls(i, 0), roi.cls(i, 1), roi.cls(i, 2)};
    RegionPrediction& r = out[i];
    r.probs = softmax(logits);
    r.objectness = objectness.empty() ? 0.0 : objectness[i];
    const std::size_t c = index_of(r.foreground_class());
    const BBox refined = clip(
        decode_box(roi.boxes[i], refine[i][c], kRoiDeltaWeights), size, size);
    r.box = refined.valid() ? refined : roi.boxes[i];
  }
  return out;
}

DetectorOutput Detector::forward(const GrayImage& image) const {
  FeatureTrace trace;
  forward_features(image, trace);
  DetectorOutput out;
  out.proposals = propose(trace);
  const auto boxes = out.proposals.boxes();
  RoiTrace roi;
  forward_rois(trace, boxes, roi);
  std::vector<double> obj;
  for (const auto& p : out.proposals.items) obj.push_back(p.objectness);
  out.regions = predictions(roi, obj);
  out.refinements = refinements(roi);
  return out;
}

void Detector::backward(const FeatureTrace& trace, const RoiTrace* roi,
                        const HeadGradients& head,
                        nn::Gradients& grads) const {
  const nn::Tensor& feature = trace.feature();
  nn::Tensor dfeature(feature.c, feature.h, feature.w);

  if (roi && roi->cls.rows > 0 &&
      (head.roi_cls.rows > 0 || head.roi_reg.rows > 0)) {
    nn::Matrix dh2(roi->hidden2.rows, roi->hidden2.cols);
    nn::Matrix tmp;
    if (head.roi_cls.rows > 0) {
      cls_.backward(params_, roi->hidden2, roi->cls, head.roi_cls, &tmp, grads);
      for (std::size_t i = 0; i < dh2.data.size(); ++i) dh2.data[i] += tmp.data[i];
    }
    if (head.roi_reg.rows > 0) {
      reg_.backward(params_, roi->hidden2, roi->reg, head.roi_reg, &tmp, grads);
      for (std::size_t i = 0; i < dh2.data.size(); ++i) dh2.data[i] += tmp.data[i];
    }
    nn::Matrix dh1, dpooled;
    fc2_.backward(params_, roi->hidden1, roi->hidden2, dh2, &dh1, grads);
    fc1_.backward(params_, roi->pooled, roi->hidden1, dh1, &dpooled, grads);
    roi_align_.backward(feature, roi->boxes, dpooled, dfeature);
  }

  if (!head.rpn_logits.empty() || !head.rpn_deltas.empty()) {
    const int A = config_.num_anchor_shapes();
    const nn::Tensor& h = trace.rpn_hidden;
    nn::Tensor dhidden(h.c, h.h, h.w);
    nn::Tensor tmp;
    if (!head.rpn_logits.empty()) {
      nn::Tensor dcls(A, h.h, h.w);
      std::size_t a = 0;
      for (int y = 0; y < h.h; ++y) {
        for (int x = 0; x < h.w; ++x) {
          for (int k = 0; k < A; ++k) {
            dcls.data[k * dcls.plane() + y * h.w + x] =
                static_cast<float>(head.rpn_logits[a++]);
          }
        }
      }
      rpn_cls_.backward(params_, h, trace.rpn_cls, dcls, &tmp, grads);
      for (std::size_t i = 0; i < tmp.data.size(); ++i) dhidden.data[i] += tmp.data[i];
    }
    if (!head.rpn_deltas.empty()) {
      nn::Tensor dreg(4 * A, h.h, h.w);
      std::size_t a = 0;
      for (int y = 0; y < h.h; ++y) {
        for (int x = 0; x < h.w; ++x) {
          for (int k = 0; k < A; ++k, ++a) {
            for (int j = 0; j < 4; ++j) {
              dreg.data[(4 * k + j) * dreg.plane() + y * h.w + x] =
                  static_cast<float>(head.rpn_deltas[a][j]);
            }
          }
        }
      }
      rpn_reg_.backward(params_, h, trace.rpn_reg, dreg, &tmp, grads);
      for (std::size_t i = 0; i < tmp.data.size(); ++i) dhidden.data[i] += tmp.data[i];
    }
    rpn_conv_.backward(params_, feature, h, dhidden, &tmp, grads);
    for (std::size_t i = 0; i < tmp.data.size(); ++i) dfeature.data[i] += tmp.data[i];
  }

  // Backbone, walking the stages in reverse.
  nn::Tensor grad = std::move(dfeature);
  std::size_t act = trace.acts.size() - 1;
  std::size_t pool = trace.pool_argmax.size();
  for (std::size_t s = backbone_.size(); s-- > 0;) {
    const Stage& st = backbone_[s];
    if (st.pool_after) {
      nn::Tensor up;
      nn::maxpool2_backward(grad, trace.pool_argmax[--pool], up);
      grad = std::move(up);
      --act;
    }
    nn::Tensor din;
    const bool need_input_grad = s > 0;
    st.conv.backward(params_, trace.acts[act - 1], trace.acts[act], grad,
                     need_input_grad ? &din : nullptr, grads);
    grad = std::move(din);
    --act;
  }
}

ParamPartition Detector::partition_params() const {
  ParamPartition p;
  for (const auto& t : params_.tensors()) {
    if (!t.group) {
      throw std::logic_error("parameter '" + t.name +
                             "' is not assigned to a parameter group");
    }
    p.group_of.push_back(*t.group);
    p.frcnn_reg_mask.push_back(t.frcnn_reg);
    switch (*t.group) {
      case ParamGroup::kConv:
        p.conv.push_back(t.name);
        p.conv_size += t.size();
        break;
      case ParamGroup::kRpn:
        p.rpn.push_back(t.name);
        p.rpn_size += t.size();
        break;
      case ParamGroup::kFrcnn:
        p.frcnn.push_back(t.name);
        p.frcnn_size += t.size();
        break;
    }
    if (t.frcnn_reg) {
      if (*t.group != ParamGroup::kFrcnn) {
        throw std::logic_error("regression parameter '" + t.name +
                               "' outside the ROI head group");
      }
      p.frcnn_reg.push_back(t.name);
      p.frcnn_reg_size += t.size();
    }
  }
  return p;
}

ParamPartition partition_params(const Detector& model) {
  return model.partition_params();
}

}  // namespace wsod
