#include "wsod/presets.hpp"

namespace wsod {

SyntheticConfig benchmark_data(int strong, int weak, int test,
                               std::uint64_t seed) {
  SyntheticConfig c;
  c.image_size_min = c.image_size_max = 64;
  c.num_strong_train = strong;
  c.num_weak_train = weak;
  c.num_test = test;
  c.seed = seed;
  return c;
}

DetectorConfig benchmark_detector() {
  DetectorConfig c;
  c.input_size = 64;
  c.feature_stride = 4;
  c.anchor_scales = {10.0, 18.0, 30.0};
  c.hidden_width = 128;
  return c;
}

TrainConfig benchmark_train(std::uint64_t seed) {
  TrainConfig c;
  c.iterations = 2000;
  c.seed = seed;
  return c;
}

PromotionConfig benchmark_promotion(std::uint64_t seed) {
  PromotionConfig c;
  c.fraction = 0.5;
  c.retrain_iterations = 4000;
  c.seed = seed;
  return c;
}

}  // namespace wsod
