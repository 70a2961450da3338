#pragma once

#include <cstdint>

#include "wsod/dataset.hpp"
#include "wsod/detector.hpp"
#include "wsod/self_training.hpp"
#include "wsod/training.hpp"

namespace wsod {

// Desk-scale benchmark: 64 px images and a detector sized for them, so a
// 2000-iteration run takes well under a minute on one CPU core.
SyntheticConfig benchmark_data(int strong = 10, int weak = 500, int test = 200,
                               std::uint64_t seed = 0);
DetectorConfig benchmark_detector();
TrainConfig benchmark_train(std::uint64_t seed = 0);
// Promotes half the weak set. Retraining gets twice the training budget: the
// strong set grows from 10 to 260 images and 2000 updates cover it too thinly.
PromotionConfig benchmark_promotion(std::uint64_t seed = 0);

}  // namespace wsod
