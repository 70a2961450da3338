#pragma once

// A detector and dataset small enough for many full training runs per test.

#include "wsod/dataset.hpp"
#include "wsod/detector.hpp"
#include "wsod/training.hpp"

namespace testutil {

inline wsod::DetectorConfig tiny_detector() {
  wsod::DetectorConfig c;
  c.input_size = 32;
  c.feature_stride = 4;
  c.anchor_scales = {6.0, 12.0};
  c.anchor_ratios = {0.5, 1.0, 2.0};
  c.pre_nms_top_n = 60;
  c.post_nms_top_n = 8;
  c.hidden_width = 16;
  c.roi_pool = 2;
  return c;
}

inline wsod::SyntheticConfig tiny_data(int strong, int weak, int test,
                                       int normal_test = 0,
                                       std::uint64_t seed = 0) {
  wsod::SyntheticConfig c;
  c.image_size_min = c.image_size_max = 32;
  c.class_mix = {0.2, 0.4, 0.4};
  c.num_strong_train = strong;
  c.num_weak_train = weak;
  c.num_test = test;
  c.num_normal_test = normal_test;
  c.seed = seed;
  return c;
}

inline wsod::TrainConfig tiny_train(int iterations) {
  wsod::TrainConfig t;
  t.iterations = iterations;
  t.rpn_samples = 16;
  t.roi_samples = 8;
  return t;
}

}  // namespace testutil
