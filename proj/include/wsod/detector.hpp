#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "wsod/box_coder.hpp"
#include "wsod/nn.hpp"
#include "wsod/records.hpp"

namespace wsod {

enum class BackbonePreset { kSmall, kLarge };

std::string_view to_string(BackbonePreset p);
BackbonePreset parse_backbone(std::string_view s);

struct DetectorConfig {
  int input_size = 128;
  BackbonePreset backbone = BackbonePreset::kSmall;
  int feature_stride = 8;  // power of two
  std::vector<double> anchor_scales{20.0, 36.0, 60.0};
  std::vector<double> anchor_ratios{0.5, 1.0, 2.0};
  int pre_nms_top_n = 300;
  int post_nms_top_n = 32;
  double rpn_nms_iou = 0.7;
  double min_proposal_size = 2.0;
  int roi_pool = 4;
  int hidden_width = 512;
  int num_classes = 3;

  int num_anchor_shapes() const {
    return static_cast<int>(anchor_scales.size() * anchor_ratios.size());
  }
  int feature_size() const { return input_size / feature_stride; }
  // Output channels per conv block: 4 blocks (small) or 8 blocks (large).
  std::vector<int> block_channels() const;

  friend bool operator==(const DetectorConfig&, const DetectorConfig&) =
      default;
};

// Throws std::invalid_argument on inconsistent settings.
void validate(const DetectorConfig& c);

struct Proposal {
  BBox box;
  double objectness = 0.0;
  int anchor = -1;
};

// RPN output for one image after NMS, sorted by descending objectness.
struct ProposalSet {
  std::vector<Proposal> items;

  std::vector<BBox> boxes() const;
  std::size_t size() const { return items.size(); }
};

// Class-specific regression output of the ROI head for one region, in the
// normalized parameterization (kRoiDeltaWeights), indexed by RegionClass.
using ClassDeltas = std::array<Deltas, kNumClasses>;

struct DetectorOutput {
  ProposalSet proposals;
  std::vector<RegionPrediction> regions;  // one per proposal, same order
  std::vector<ClassDeltas> refinements;   // one per proposal, same order
};

struct ParamPartition {
  std::vector<std::string> conv;
  std::vector<std::string> rpn;
  std::vector<std::string> frcnn;
  std::vector<std::string> frcnn_reg;  // subset of frcnn
  // Per tensor of the ParameterSet, in order.
  std::vector<nn::ParamGroup> group_of;
  std::vector<bool> frcnn_reg_mask;

  std::size_t conv_size = 0;
  std::size_t rpn_size = 0;
  std::size_t frcnn_size = 0;
  std::size_t frcnn_reg_size = 0;
};

// Backbone and RPN activations for one image, kept for backprop.
struct FeatureTrace {
  std::vector<nn::Tensor> acts;  // acts[0] = normalized input
  std::vector<std::vector<std::int32_t>> pool_argmax;
  nn::Tensor rpn_hidden;
  nn::Tensor rpn_cls;  // [A, h, w]
  nn::Tensor rpn_reg;  // [4A, h, w]

  const nn::Tensor& feature() const { return acts.back(); }
};

struct RoiTrace {
  std::vector<BBox> boxes;
  nn::Matrix pooled;
  nn::Matrix hidden1;
  nn::Matrix hidden2;
  nn::Matrix cls;  // [n, 3] logits
  nn::Matrix reg;  // [n, 12] class-specific deltas
};

// Loss gradients with respect to head outputs. Empty members mean "no
// gradient from this head" and the corresponding backward pass is skipped.
struct HeadGradients {
  std::vector<double> rpn_logits;  // per anchor
  std::vector<Deltas> rpn_deltas;  // per anchor
  nn::Matrix roi_cls;              // [n, 3]
  nn::Matrix roi_reg;              // [n, 12]
};

// Shared backbone -> RPN -> RoIAlign + two hidden FC layers -> class scores
// and class-specific box regression.
class Detector {
 public:
  Detector(const DetectorConfig& config, std::uint64_t seed);

  const DetectorConfig& config() const { return config_; }
  std::uint64_t seed() const { return seed_; }
  nn::ParameterSet& params() { return params_; }
  const nn::ParameterSet& params() const { return params_; }
  const std::vector<BBox>& anchors() const { return anchors_; }

  // Inference: proposals, one RegionPrediction per proposal and the raw
  // refinements. Pure in the weights and the image.
  DetectorOutput forward(const GrayImage& image) const;

  // Training path.
  void forward_features(const GrayImage& image, FeatureTrace& trace) const;
  std::vector<double> rpn_logits(const FeatureTrace& trace) const;
  std::vector<Deltas> rpn_deltas(const FeatureTrace& trace) const;
  ProposalSet propose(const FeatureTrace& trace) const;
  void forward_rois(const FeatureTrace& trace, std::span<const BBox> boxes,
                    RoiTrace& roi) const;
  // Region predictions (softmax + refined boxes) for an ROI forward pass.
  std::vector<RegionPrediction> predictions(
      const RoiTrace& roi, std::span<const double> objectness) const;
  std::vector<ClassDeltas> refinements(const RoiTrace& roi) const;

  // Accumulates parameter gradients into `grads`.
  void backward(const FeatureTrace& trace, const RoiTrace* roi,
                const HeadGradients& head, nn::Gradients& grads) const;

  // Disjoint, exhaustive grouping of the trainable parameters. Throws
  // std::logic_error if any tensor has no group.
  ParamPartition partition_params() const;

 private:
  struct Stage {
    nn::Conv2d conv;
    bool pool_after = false;
  };

  DetectorConfig config_;
  std::uint64_t seed_ = 0;
  nn::ParameterSet params_;
  std::vector<Stage> backbone_;
  nn::Conv2d rpn_conv_;
  nn::Conv2d rpn_cls_;
  nn::Conv2d rpn_reg_;
  nn::RoiAlign roi_align_;
  nn::Linear fc1_;
  nn::Linear fc2_;
  nn::Linear cls_;
  nn::Linear reg_;
  std::vector<BBox> anchors_;
};

ParamPartition partition_params(const Detector& model);

// Input normalization used by the backbone.
nn::Tensor image_to_tensor(const GrayImage& image);

std::array<double, kNumClasses> softmax(std::span<const double> logits);

}  // namespace wsod
