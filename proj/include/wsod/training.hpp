#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "wsod/augment.hpp"
#include "wsod/dataset.hpp"
#include "wsod/detector.hpp"
#include "wsod/losses.hpp"
#include "wsod/nn.hpp"
#include "wsod/rng.hpp"

namespace wsod {

enum class TrainVariant { kCombined, kAlternating };

std::string_view to_string(TrainVariant v);
TrainVariant parse_variant(std::string_view s);

struct AlphaSchedule {
  enum class Kind { kGradualLinear, kStatic };
  Kind kind = Kind::kGradualLinear;
  double value = 0.5;  // only used by kStatic

  friend bool operator==(const AlphaSchedule&, const AlphaSchedule&) = default;
};

// "gradual" or "static:VALUE".
std::string to_string(const AlphaSchedule& s);
AlphaSchedule parse_alpha(std::string_view s);

struct TrainConfig {
  int strong_batch = 1;
  int weak_batch = 2;
  double lr = 0.0005;         // combined variant
  double lr_strong = 0.0005;  // alternating, strong steps
  double lr_weak = 0.0005;    // alternating, weak steps
  double alpha_init = 0.01;
  AlphaSchedule alpha;
  TrainVariant variant = TrainVariant::kCombined;
  double weight_decay = 0.0005;
  int iterations = 2000;
  MoICriterion moi = MoICriterion::kMostMalignant;
  AssignmentRule assignment{0.7, NegativeRule::kMaxIouBelow, 0.7, 0.3, true};
  // Anchor and ROI minibatch sampling inside one image.
  int rpn_samples = 64;
  double rpn_positive_fraction = 0.5;
  int roi_samples = 32;
  double roi_positive_fraction = 0.25;
  bool augment = true;
  // Inverse-frequency class weights (strong MoI labels for the ROI head,
  // weak image labels for the MIL loss). Unit weights when false.
  bool balance_classes = true;
  std::uint64_t seed = 0;

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

void validate(const TrainConfig& c);

double alpha_at(int iteration, const TrainConfig& config);

// Adam moments, kept per parameter tensor with a per-tensor step count so
// that tensors excluded from an update keep their state untouched.
struct AdamState {
  std::vector<std::vector<float>> m;
  std::vector<std::vector<float>> v;
  std::vector<std::int64_t> steps;

  void reset(const nn::ParameterSet& params);
  friend bool operator==(const AdamState&, const AdamState&) = default;
};

inline constexpr double kAdamBeta1 = 0.9;
inline constexpr double kAdamBeta2 = 0.999;
inline constexpr double kAdamEps = 1e-8;

// One Adam update with decoupled weight decay on every tensor whose mask
// entry is true (empty mask = all). Masked-out tensors and their moments are
// left bitwise unchanged.
void adam_update(nn::ParameterSet& params, const nn::Gradients& grads,
                 AdamState& state, double lr, double weight_decay,
                 const std::vector<bool>& update_mask = {});

enum class Stream { kStrong, kWeak };

std::string_view to_string(Stream s);

// Loss terms of one iteration, batch means. For combined steps `total` is
// strong + alpha * weak; for alternating iterations it is the sum of the two
// half-steps' objectives.
struct LossRow {
  int iteration = 0;
  double rpn_cls = 0.0;
  double rpn_reg = 0.0;
  double frc_cls = 0.0;
  double frc_reg = 0.0;
  double ws = 0.0;
  double alpha = 0.0;
  double total = 0.0;

  double strong() const { return rpn_cls + rpn_reg + frc_cls + frc_reg; }
};

struct TrainState {
  int iteration = 0;
  double alpha = 0.0;
  AdamState optimizer;
  std::vector<LossRow> history;
  // Streams consumed, in order. A combined update logs strong then weak.
  std::vector<Stream> step_log;
  std::string checkpoint;        // last checkpoint written, if any
};

TrainState make_train_state(const Detector& model, const TrainConfig& config);

// Test hooks for the masking contract.
struct StepOptions {
  bool zero_strong_gradient = false;
  bool zero_weak_gradient = false;
};

// Gradient of the batch-mean strong loss for one image, scaled by `scale`
// and accumulated into `grads`. `rng` drives augmentation and sampling.
// Returns the unscaled loss terms.
StrongLoss strong_image_gradient(const Detector& model, const ImageRecord& rec,
                                 const TrainConfig& config,
                                 const ClassWeights& weights, Rng& rng,
                                 float scale, nn::Gradients& grads);

// Same for the MIL loss of one weakly labelled image. The MIL loss only
// reaches the ROI classifier, hidden layers and backbone; the regression
// output is never touched.
MilLogitLoss weak_image_gradient(const Detector& model, const ImageRecord& rec,
                                 const TrainConfig& config,
                                 const ClassWeights& weights, Rng& rng,
                                 float scale, nn::Gradients& grads);

// One update on strong + alpha * weak loss with rate config.lr. The regression
// output receives gradient from the strong loss only; with zero_strong_gradient set it is
// excluded from the update entirely. Both batches must be non-empty.
LossRow step_combined(Detector& model, TrainState& state,
                      const TrainConfig& config,
                      std::span<const ImageRecord* const> strong_batch,
                      std::span<const ImageRecord* const> weak_batch,
                      const ClassWeights& weights, Rng& strong_rng,
                      Rng& weak_rng, const StepOptions& options = {});

// One update from a single stream: strong steps minimize the strong loss at
// config.lr_strong over all parameters; weak steps minimize alpha * weak loss at
// config.lr_weak over everything except the regression output.
LossRow step_alternating(Detector& model, TrainState& state,
                         const TrainConfig& config,
                         std::span<const ImageRecord* const> batch,
                         Stream stream, const ClassWeights& weights, Rng& rng,
                         const StepOptions& options = {});

ClassWeights class_weights_for(std::span<const ImageRecord> strong,
                               std::span<const ImageRecord> weak,
                               bool balance);

// Joint training for config.iterations iterations. An empty weak set runs
// plain strong steps. Throws std::invalid_argument without strong records.
TrainState train(Detector& model, std::span<const ImageRecord> strong,
                 std::span<const ImageRecord> weak, const TrainConfig& config);
// Uses the train split of the manifest.
TrainState train(Detector& model, const DatasetManifest& manifest,
                 const TrainConfig& config);

// Plain supervised trainer used as the reference baseline.
TrainState train_strong_only(Detector& model,
                             std::span<const ImageRecord> strong,
                             const TrainConfig& config);

// iteration,L_rpn_cls,L_rpn_reg,L_frc_cls,L_frc_reg,L_ws,alpha
void write_loss_csv(const std::vector<LossRow>& history,
                    const std::filesystem::path& path);

}  // namespace wsod
