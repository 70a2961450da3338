#include <doctest.h>

#include <cmath>
#include <fstream>
#include <string>

#include "test_helpers.hpp"
#include "tiny_setup.hpp"
#include "wsod/training.hpp"

using namespace wsod;

namespace {

struct Fixture {
  DatasetManifest data = generate_synthetic(testutil::tiny_data(4, 6, 0));
  std::vector<ImageRecord> strong = data.select(Split::kTrain, Supervision::kStrong);
  std::vector<ImageRecord> weak = data.select(Split::kTrain, Supervision::kWeak);
};

std::vector<std::vector<float>> regression_values(const Detector& m) {
  std::vector<std::vector<float>> out;
  for (const auto& t : m.params().tensors()) {
    if (t.frcnn_reg) out.push_back(t.values);
  }
  return out;
}

std::vector<std::vector<float>> other_values(const Detector& m) {
  std::vector<std::vector<float>> out;
  for (const auto& t : m.params().tensors()) {
    if (!t.frcnn_reg) out.push_back(t.values);
  }
  return out;
}

}  // namespace

TEST_CASE("alpha schedule") {
  TrainConfig c;
  c.iterations = 100;
  c.alpha_init = 0.01;
  CHECK(alpha_at(0, c) == doctest::Approx(0.01));
  CHECK(alpha_at(50, c) == doctest::Approx(0.505));
  CHECK(alpha_at(100, c) == doctest::Approx(1.0));
  for (int it = 1; it <= 100; ++it) CHECK(alpha_at(it, c) >= alpha_at(it - 1, c));

  c.alpha = parse_alpha("static:0.25");
  CHECK(alpha_at(0, c) == 0.25);
  CHECK(alpha_at(99, c) == 0.25);
  CHECK(parse_alpha(to_string(c.alpha)) == c.alpha);
  CHECK(parse_alpha("gradual").kind == AlphaSchedule::Kind::kGradualLinear);
  CHECK(parse_alpha("static:0").value == 0.0);
  CHECK_THROWS(parse_alpha("static:"));
  CHECK_THROWS(parse_alpha("static:1.5"));
  CHECK_THROWS(parse_alpha("static:0.5x"));
  CHECK_THROWS(parse_alpha("linear"));
}

TEST_CASE("train config validation") {
  TrainConfig c;
  CHECK_NOTHROW(validate(c));
  c.alpha_init = 0.0;
  CHECK_THROWS_AS(validate(c), std::invalid_argument);
  c = {};
  c.alpha_init = 1.0;
  CHECK_NOTHROW(validate(c));
  c = {};
  c.lr = 0.0;
  CHECK_THROWS_AS(validate(c), std::invalid_argument);
  c = {};
  c.weak_batch = 0;
  CHECK_THROWS_AS(validate(c), std::invalid_argument);
  CHECK(parse_variant("alternating") == TrainVariant::kAlternating);
  CHECK_THROWS(parse_variant("joint"));
}

TEST_CASE("Adam: zero gradient applies only decoupled weight decay") {
  Detector model(testutil::tiny_detector(), 1);
  const auto before = model.params();
  nn::Gradients zero(model.params());
  AdamState state;
  const double lr = 0.01, wd = 0.1;
  adam_update(model.params(), zero, state, lr, wd);
  for (std::size_t i = 0; i < before.count(); ++i) {
    const auto& a = before[static_cast<int>(i)].values;
    const auto& b = model.params()[static_cast<int>(i)].values;
    for (std::size_t k = 0; k < a.size(); ++k) {
      const double th = a[k];
      CHECK(b[k] == static_cast<float>(th - lr * wd * th));
    }
  }
}

TEST_CASE("Adam: first step matches the closed form") {
  Detector model(testutil::tiny_detector(), 2);
  const auto before = model.params();
  nn::Gradients g(model.params());
  Rng rng(3);
  for (std::size_t i = 0; i < g.count(); ++i) {
    for (auto& v : g[static_cast<int>(i)]) v = static_cast<float>(uniform(rng, -1, 1));
  }
  AdamState state;
  const double lr = 1e-3, wd = 5e-4;
  adam_update(model.params(), g, state, lr, wd);
  for (std::size_t i = 0; i < g.count(); ++i) {
    const auto& a = before[static_cast<int>(i)].values;
    const auto& b = model.params()[static_cast<int>(i)].values;
    for (std::size_t k = 0; k < a.size(); ++k) {
      // m_hat = g, v_hat = g^2 after one step.
      const double gk = g[static_cast<int>(i)][k];
      const double want = a[k] - lr * gk / (std::abs(gk) + 1e-8) - lr * wd * a[k];
      CHECK(std::abs(b[k] - want) < 1e-6);
    }
    CHECK(state.steps[i] == 1);
  }
}

TEST_CASE("Adam: masked tensors and their moments stay bitwise unchanged") {
  Detector model(testutil::tiny_detector(), 4);
  nn::Gradients g(model.params());
  for (std::size_t i = 0; i < g.count(); ++i) {
    for (auto& v : g[static_cast<int>(i)]) v = 0.5f;
  }
  AdamState state;
  adam_update(model.params(), g, state, 1e-3, 1e-3);
  const auto params_before = model.params();
  const auto state_before = state;
  std::vector<bool> mask(g.count(), true);
  mask[0] = false;
  mask.back() = false;
  adam_update(model.params(), g, state, 1e-3, 1e-3, mask);
  CHECK(model.params()[0].values == params_before[0].values);
  CHECK(state.m[0] == state_before.m[0]);
  CHECK(state.v[0] == state_before.v[0]);
  CHECK(state.steps[0] == 1);
  CHECK(state.steps[1] == 2);
  CHECK(model.params()[1].values != params_before[1].values);
  const int last = static_cast<int>(g.count()) - 1;
  CHECK(model.params()[last].values == params_before[last].values);
}

TEST_CASE("weak step never touches the regression output") {
  Fixture f;
  Detector model(testutil::tiny_detector(), 5);
  TrainConfig cfg = testutil::tiny_train(1);
  cfg.alpha = parse_alpha("static:1");
  TrainState state = make_train_state(model, cfg);
  const auto reg_before = regression_values(model);
  const auto other_before = other_values(model);
  std::vector<const ImageRecord*> batch{&f.weak[0], &f.weak[1]};
  Rng rng(6);
  const ClassWeights w = class_weights_for(f.strong, f.weak, true);
  step_alternating(model, state, cfg, batch, Stream::kWeak, w, rng);
  CHECK(regression_values(model) == reg_before);
  CHECK(other_values(model) != other_before);

  // The gradient itself is zero there too.
  nn::Gradients g(model.params());
  Rng rng2(7);
  weak_image_gradient(model, f.weak[2], cfg, w, rng2, 1.0f, g);
  const auto tensors = model.params().tensors();
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    if (!tensors[i].frcnn_reg) continue;
    for (float v : g[static_cast<int>(i)]) CHECK(v == 0.0f);
  }
}

TEST_CASE("combined step: loss composition and masking hooks") {
  Fixture f;
  TrainConfig cfg = testutil::tiny_train(10);
  const ClassWeights w = class_weights_for(f.strong, f.weak, true);
  std::vector<const ImageRecord*> sb{&f.strong[0]};
  std::vector<const ImageRecord*> wb{&f.weak[0], &f.weak[1]};

  auto run = [&](const TrainConfig& c, const StepOptions& opts, Detector& m) {
    TrainState s = make_train_state(m, c);
    s.iteration = 3;
    Rng r1(8), r2(9);
    return step_combined(m, s, c, sb, wb, w, r1, r2, opts);
  };

  Detector plain(testutil::tiny_detector(), 10);
  const auto reg0 = regression_values(plain);
  const LossRow row = run(cfg, {}, plain);
  CHECK(row.alpha == doctest::Approx(alpha_at(3, cfg)));
  CHECK(row.total == doctest::Approx(row.strong() + row.alpha * row.ws));
  CHECK(row.ws > 0.0);
  CHECK(regression_values(plain) != reg0);

  // Without the strong gradient the regression output is frozen.
  Detector frozen(testutil::tiny_detector(), 10);
  run(cfg, {.zero_strong_gradient = true}, frozen);
  CHECK(regression_values(frozen) == reg0);
  CHECK(other_values(frozen) != other_values(Detector(testutil::tiny_detector(), 10)));

  // Zeroing the weak gradient equals running with alpha = 0.
  Detector no_weak(testutil::tiny_detector(), 10);
  run(cfg, {.zero_weak_gradient = true}, no_weak);
  TrainConfig zero_alpha = cfg;
  zero_alpha.alpha = parse_alpha("static:0");
  Detector alpha0(testutil::tiny_detector(), 10);
  run(zero_alpha, {}, alpha0);
  CHECK(no_weak.params() == alpha0.params());
  CHECK(no_weak.params() != plain.params());
}

TEST_CASE("alternating training interleaves strong and weak steps") {
  Fixture f;
  Detector model(testutil::tiny_detector(), 11);
  TrainConfig cfg = testutil::tiny_train(5);
  cfg.variant = TrainVariant::kAlternating;
  const TrainState s = train(model, f.strong, f.weak, cfg);
  REQUIRE(s.step_log.size() == 10);
  for (std::size_t i = 0; i < s.step_log.size(); ++i) {
    CHECK(s.step_log[i] == (i % 2 == 0 ? Stream::kStrong : Stream::kWeak));
  }
  CHECK(s.history.size() == 5);
  for (std::size_t i = 0; i < s.history.size(); ++i) {
    CHECK(s.history[i].iteration == static_cast<int>(i));
    CHECK(s.history[i].total ==
          doctest::Approx(s.history[i].strong() + s.history[i].alpha * s.history[i].ws));
  }
}

TEST_CASE("alpha = 0 joint training reduces to strong-only training") {
  Fixture f;
  TrainConfig cfg = testutil::tiny_train(6);
  cfg.alpha = parse_alpha("static:0");
  cfg.balance_classes = false;
  Detector joint(testutil::tiny_detector(), 12);
  train(joint, f.strong, f.weak, cfg);
  Detector strong(testutil::tiny_detector(), 12);
  train_strong_only(strong, f.strong, cfg);
  CHECK(joint.params() == strong.params());
}

TEST_CASE("an empty weak set runs plain strong steps") {
  Fixture f;
  TrainConfig cfg = testutil::tiny_train(6);
  Detector a(testutil::tiny_detector(), 13);
  const TrainState sa = train(a, f.strong, {}, cfg);
  Detector b(testutil::tiny_detector(), 13);
  const TrainState sb = train_strong_only(b, f.strong, cfg);
  CHECK(a.params() == b.params());
  CHECK(sa.history.size() == sb.history.size());
  for (Stream s : sa.step_log) CHECK(s == Stream::kStrong);
}

TEST_CASE("training is deterministic in the seed") {
  Fixture f;
  TrainConfig cfg = testutil::tiny_train(4);
  Detector a(testutil::tiny_detector(), 14), b(testutil::tiny_detector(), 14);
  const auto sa = train(a, f.strong, f.weak, cfg);
  const auto sb = train(b, f.strong, f.weak, cfg);
  CHECK(a.params() == b.params());
  CHECK(sa.optimizer == sb.optimizer);
  cfg.seed = 1;
  Detector c(testutil::tiny_detector(), 14);
  train(c, f.strong, f.weak, cfg);
  CHECK(c.params() != a.params());
}

TEST_CASE("training refuses inputs without strong records") {
  Fixture f;
  TrainConfig cfg = testutil::tiny_train(2);
  Detector model(testutil::tiny_detector(), 15);
  CHECK_THROWS_AS(train(model, {}, f.weak, cfg), std::invalid_argument);
  CHECK_THROWS_AS(train_strong_only(model, {}, cfg), std::invalid_argument);
  CHECK_THROWS_AS(train(model, f.weak, f.weak, cfg), std::invalid_argument);
  CHECK_THROWS_AS(train(model, f.strong, f.strong, cfg), std::invalid_argument);
}

TEST_CASE("class weights from the training labels") {
  Fixture f;
  const ClassWeights unit = class_weights_for(f.strong, f.weak, false);
  for (double v : unit.region) CHECK(v == 1.0);
  for (double v : unit.image) CHECK(v == 1.0);
  const ClassWeights w = class_weights_for(f.strong, f.weak, true);
  CHECK(w.region[0] == 1.0);
  std::vector<DiagnosisLabel> weak_labels;
  for (const auto& r : f.weak) weak_labels.push_back(r.label());
  CHECK(w.image == inverse_frequency_weights(weak_labels));
}

TEST_CASE("loss CSV") {
  std::vector<LossRow> rows(3);
  for (int i = 0; i < 3; ++i) {
    rows[i].iteration = i;
    rows[i].rpn_cls = 0.5 * i;
    rows[i].alpha = 0.25;
  }
  const auto dir = testutil::temp_dir("csv");
  write_loss_csv(rows, dir / "loss.csv");
  std::ifstream in(dir / "loss.csv");
  std::string line;
  std::getline(in, line);
  CHECK(line == "iteration,L_rpn_cls,L_rpn_reg,L_frc_cls,L_frc_reg,L_ws,alpha");
  std::getline(in, line);
  CHECK(line == "0,0,0,0,0,0,0.25");
  std::getline(in, line);
  CHECK(line == "1,0.5,0,0,0,0,0.25");
  int more = 0;
  while (std::getline(in, line)) ++more;
  CHECK(more == 1);
  std::filesystem::remove_all(dir);
}
