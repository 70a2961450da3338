#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "wsod/dataset.hpp"
#include "wsod/detector.hpp"
#include "wsod/evaluation.hpp"
#include "wsod/self_training.hpp"
#include "wsod/training.hpp"

namespace wsod {

using Json = nlohmann::ordered_json;

// Raised for malformed or inconsistent configuration files.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Everything one CLI invocation needs. Either `data` (generate) or
// `manifest` (load) names the dataset.
struct ExperimentSpec {
  std::optional<SyntheticConfig> data;
  std::string manifest;
  DetectorConfig detector;
  TrainConfig train;
  std::optional<PromotionConfig> promotion;
  EvalOptions eval;
  std::string output_dir;
  std::vector<std::uint64_t> seeds{0};
  // Sweep grid over training-set sizes.
  std::vector<int> sweep_strong;
  std::vector<int> sweep_weak;
};

void validate(const ExperimentSpec& s);

// Serialization. Parsers start from the defaults, so any subset of keys is
// accepted; unknown keys and wrong types raise ConfigError.
Json to_json(const SyntheticConfig& c);
Json to_json(const DetectorConfig& c);
Json to_json(const TrainConfig& c);
Json to_json(const PromotionConfig& c);
Json to_json(const EvalOptions& c);
Json to_json(const ExperimentSpec& s);

SyntheticConfig synthetic_config_from_json(const Json& j);
DetectorConfig detector_config_from_json(const Json& j);
TrainConfig train_config_from_json(const Json& j);
PromotionConfig promotion_config_from_json(const Json& j);
EvalOptions eval_options_from_json(const Json& j);
ExperimentSpec experiment_from_json(const Json& j);

ExperimentSpec load_experiment(const std::filesystem::path& path);
void save_json(const Json& j, const std::filesystem::path& path);
Json load_json(const std::filesystem::path& path);

// Reports and detections.
Json to_json(const BBox& b);
Json to_json(const BootstrapReport& r);
Json to_json(const EvalReport& r);
Json detections_to_json(std::span<const DetectionResult> results);
std::vector<DetectionResult> detections_from_json(const Json& j);

}  // namespace wsod
