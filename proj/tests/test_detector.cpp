#include <doctest.h>

#include <cmath>
#include <numeric>
#include <set>

#include "test_helpers.hpp"
#include "wsod/box_coder.hpp"
#include "wsod/detector.hpp"

using namespace wsod;

namespace {

DetectorConfig tiny_config() {
  DetectorConfig c;
  c.input_size = 32;
  c.feature_stride = 4;
  c.anchor_scales = {8.0, 16.0};
  c.anchor_ratios = {0.5, 1.0, 2.0};
  c.pre_nms_top_n = 60;
  c.post_nms_top_n = 8;
  c.hidden_width = 16;
  c.roi_pool = 2;
  return c;
}

GrayImage noise_image(int size, Rng& rng) {
  GrayImage img(size, size);
  for (auto& p : img.pixels) p = static_cast<std::uint8_t>(uniform_int(rng, 0, 255));
  return img;
}

}  // namespace

TEST_CASE("box coder round trip") {
  Rng rng(2);
  for (int i = 0; i < 200; ++i) {
    const BBox ref = testutil::random_box(rng, 100, 4, 40);
    const BBox tgt = testutil::random_box(rng, 100, 4, 40);
    for (const auto& w : {kUnitDeltaWeights, kRoiDeltaWeights}) {
      const BBox back = decode_box(ref, encode_box(ref, tgt, w), w);
      CHECK(back.x_min == doctest::Approx(tgt.x_min).epsilon(1e-9));
      CHECK(back.y_max == doctest::Approx(tgt.y_max).epsilon(1e-9));
    }
  }
  const BBox a{0, 0, 10, 10};
  const auto d = encode_box(a, a);
  for (double v : d) CHECK(v == 0.0);
}

TEST_CASE("anchors tile every pixel") {
  const auto c = tiny_config();
  const auto anchors = generate_anchors(c.feature_size(), c.feature_size(),
                                        c.feature_stride, c.anchor_scales,
                                        c.anchor_ratios);
  CHECK(anchors.size() == static_cast<std::size_t>(c.feature_size() * c.feature_size() *
                                                   c.num_anchor_shapes()));
  for (int y = 0; y < c.input_size; ++y) {
    for (int x = 0; x < c.input_size; ++x) {
      const double px = x + 0.5, py = y + 0.5;
      bool covered = false;
      for (const auto& a : anchors) {
        if (a.x_min <= px && px < a.x_max && a.y_min <= py && py < a.y_max) {
          covered = true;
          break;
        }
      }
      CHECK(covered);
    }
  }
}

TEST_CASE("config validation") {
  auto c = tiny_config();
  CHECK_NOTHROW(validate(c));
  c.post_nms_top_n = c.pre_nms_top_n + 1;
  CHECK_THROWS_AS(validate(c), std::invalid_argument);
  c = tiny_config();
  c.anchor_scales.clear();
  CHECK_THROWS_AS(validate(c), std::invalid_argument);
  c = tiny_config();
  c.feature_stride = 3;
  CHECK_THROWS_AS(validate(c), std::invalid_argument);
  CHECK(DetectorConfig{}.hidden_width == 512);
}

TEST_CASE("forward outputs valid distributions and respects the proposal cap") {
  const auto c = tiny_config();
  const Detector model(c, 1);
  Rng rng(4);
  for (int i = 0; i < 100; ++i) {
    const auto out = model.forward(noise_image(c.input_size, rng));
    CHECK(out.proposals.size() <= static_cast<std::size_t>(c.post_nms_top_n));
    CHECK(out.regions.size() == out.proposals.size());
    for (std::size_t k = 1; k < out.proposals.size(); ++k) {
      CHECK(out.proposals.items[k - 1].objectness >= out.proposals.items[k].objectness);
    }
    for (const auto& r : out.regions) {
      CHECK(std::abs(r.probs[0] + r.probs[1] + r.probs[2] - 1.0) < 1e-6);
      CHECK(inside_image(r.box, c.input_size, c.input_size));
      CHECK(r.objectness >= 0.0);
      CHECK(r.objectness <= 1.0);
    }
  }
}

TEST_CASE("zero classifier weights give uniform probabilities") {
  Detector model(tiny_config(), 2);
  for (auto& t : model.params().tensors()) {
    if (t.name.rfind("frcnn.cls", 0) == 0) std::fill(t.values.begin(), t.values.end(), 0.0f);
  }
  Rng rng(5);
  const auto out = model.forward(noise_image(32, rng));
  REQUIRE_FALSE(out.regions.empty());
  for (const auto& r : out.regions) {
    for (double p : r.probs) CHECK(p == doctest::Approx(1.0 / 3.0));
  }
}

TEST_CASE("inference is pure") {
  const Detector model(tiny_config(), 3);
  Rng rng(6);
  const auto img = noise_image(32, rng);
  const auto a = model.forward(img);
  const auto b = model.forward(img);
  REQUIRE(a.regions.size() == b.regions.size());
  for (std::size_t i = 0; i < a.regions.size(); ++i) {
    CHECK(a.regions[i].box == b.regions[i].box);
    CHECK(a.regions[i].probs == b.regions[i].probs);
  }
}

TEST_CASE("wrong input size is rejected") {
  const Detector model(tiny_config(), 3);
  CHECK_THROWS_AS(model.forward(GrayImage(16, 16)), std::invalid_argument);
}

TEST_CASE("parameter partition") {
  const Detector model(DetectorConfig{}, 0);
  const auto p = partition_params(model);
  const auto& params = model.params();
  CHECK(p.conv_size + p.rpn_size + p.frcnn_size == params.total_size());
  CHECK(p.conv.size() + p.rpn.size() + p.frcnn.size() == params.count());
  std::set<std::string> seen;
  for (const auto* g : {&p.conv, &p.rpn, &p.frcnn}) {
    for (const auto& n : *g) CHECK(seen.insert(n).second);
  }
  CHECK(p.frcnn_reg == std::vector<std::string>{"frcnn.reg.weight", "frcnn.reg.bias"});
  for (const auto& n : p.frcnn_reg) {
    CHECK(std::find(p.frcnn.begin(), p.frcnn.end(), n) != p.frcnn.end());
  }
  CHECK(p.frcnn_reg_size == static_cast<std::size_t>(512 * 12 + 12));
  // Stable across calls.
  const auto q = partition_params(model);
  CHECK(q.conv == p.conv);
  CHECK(q.frcnn_reg_mask == p.frcnn_reg_mask);

  const Detector large([] {
    DetectorConfig c;
    c.backbone = BackbonePreset::kLarge;
    return c;
  }(), 0);
  CHECK(partition_params(large).conv.size() == 2 * 2 * 8);
}

TEST_CASE("unassigned parameters are a construction error") {
  Detector model(tiny_config(), 0);
  model.params().add("stray.weight", std::nullopt, {3});
  CHECK_THROWS_AS(partition_params(model), std::logic_error);
}

// Backprop through the whole network against central differences of a random
// linear functional of every head output.
TEST_CASE("network gradients match finite differences") {
  const auto c = tiny_config();
  Detector model(c, 9);
  Rng rng(10);
  const GrayImage img = noise_image(c.input_size, rng);
  std::vector<BBox> rois;
  for (int i = 0; i < 4; ++i) rois.push_back(testutil::random_box(rng, 32, 6, 20));

  FeatureTrace probe;
  model.forward_features(img, probe);
  const std::size_t na = model.anchors().size();
  std::vector<double> w_logit(na);
  std::vector<Deltas> w_delta(na);
  for (auto& v : w_logit) v = uniform(rng, -1, 1);
  for (auto& d : w_delta) {
    for (auto& v : d) v = uniform(rng, -1, 1);
  }
  nn::Matrix w_cls(4, 3), w_reg(4, 12);
  for (auto& v : w_cls.data) v = static_cast<float>(uniform(rng, -1, 1));
  for (auto& v : w_reg.data) v = static_cast<float>(uniform(rng, -1, 1));

  auto objective = [&](const Detector& m) {
    FeatureTrace t;
    m.forward_features(img, t);
    RoiTrace r;
    m.forward_rois(t, rois, r);
    const auto lg = m.rpn_logits(t);
    const auto dl = m.rpn_deltas(t);
    double s = 0.0;
    for (std::size_t a = 0; a < na; ++a) {
      s += w_logit[a] * lg[a];
      for (int j = 0; j < 4; ++j) s += w_delta[a][j] * dl[a][j];
    }
    for (std::size_t k = 0; k < r.cls.data.size(); ++k) s += w_cls.data[k] * r.cls.data[k];
    for (std::size_t k = 0; k < r.reg.data.size(); ++k) s += w_reg.data[k] * r.reg.data[k];
    return s;
  };

  FeatureTrace t;
  model.forward_features(img, t);
  RoiTrace r;
  model.forward_rois(t, rois, r);
  HeadGradients head{w_logit, w_delta, w_cls, w_reg};
  nn::Gradients grads(model.params());
  model.backward(t, &r, head, grads);

  int checked = 0, agreed = 0;
  for (std::size_t ti = 0; ti < model.params().count(); ++ti) {
    auto& values = model.params()[static_cast<int>(ti)].values;
    for (int trial = 0; trial < 3; ++trial) {
      const std::size_t k = static_cast<std::size_t>(
          uniform_int(rng, 0, static_cast<int>(values.size()) - 1));
      const float orig = values[k];
      const float h = 1e-2f * std::max(1.0f, std::abs(orig));
      values[k] = orig + h;
      const double up = objective(model);
      values[k] = orig - h;
      const double down = objective(model);
      values[k] = orig;
      const double fd = (up - down) / (2.0 * h);
      const double an = grads[static_cast<int>(ti)][k];
      ++checked;
      if (std::abs(fd - an) <= 2e-2 * std::max(1.0, std::abs(fd))) ++agreed;
    }
  }
  // Float32 forward passes and ReLU kinks make a few samples noisy.
  CHECK(agreed >= checked * 9 / 10);
}
