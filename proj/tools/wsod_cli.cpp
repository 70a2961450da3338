// Command-line driver: data generation, training, self-training, evaluation
// and size sweeps. Every run directory receives resolved_config.json, which
// reproduces the run when passed back through --config.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "wsod/checkpoint.hpp"
#include "wsod/config_io.hpp"
#include "wsod/evaluation.hpp"
#include "wsod/manifest_io.hpp"
#include "wsod/presets.hpp"
#include "wsod/self_training.hpp"
#include "wsod/training.hpp"

namespace fs = std::filesystem;
using namespace wsod;

namespace {

enum ExitCode { kOk = 0, kUsage = 1, kConfig = 2, kData = 3, kRuntime = 4 };

struct Failure {
  ExitCode code;
  std::string message;
};

[[noreturn]] void fail(ExitCode code, const std::string& message) {
  throw Failure{code, message};
}

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string manifest;
  std::string checkpoint;
  std::string variant;
  std::string moi;
  std::string alpha;
  std::optional<double> promote_fraction;
};

void log(const std::string& msg) { std::cerr << "[wsod] " << msg << std::endl; }

// Loads the spec, applies command-line overrides and validates. Without a
// dataset section the desk-scale benchmark is used.
ExperimentSpec resolve_spec(const Options& o, const std::string& command) {
  ExperimentSpec s;
  try {
    if (!o.config.empty()) s = load_experiment(o.config);
    else {
      s.detector = benchmark_detector();
      s.train = benchmark_train();
      if (command == "selftrain") s.promotion = benchmark_promotion();
    }
    if (!o.manifest.empty()) s.manifest = o.manifest;
    if (s.manifest.empty() && !s.data) s.data = benchmark_data();
    if (o.seed) s.seeds = {*o.seed};
    if (!o.variant.empty()) s.train.variant = parse_variant(o.variant);
    if (!o.moi.empty()) s.train.moi = parse_moi_criterion(o.moi);
    if (!o.alpha.empty()) s.train.alpha = parse_alpha(o.alpha);
    if (o.promote_fraction) {
      if (!s.promotion) s.promotion = PromotionConfig{};
      s.promotion->fraction = *o.promote_fraction;
    }
    if (command == "selftrain" && !s.promotion) s.promotion = PromotionConfig{};
    if (!o.out.empty()) {
      s.output_dir = o.out;
    } else if (s.output_dir.empty()) {
      const char* root = std::getenv("WSOD_OUT_ROOT");
      s.output_dir = (fs::path(root && *root ? root : "runs") / command).string();
    }
    validate(s);
  } catch (const ConfigError& e) {
    fail(kConfig, e.what());
  } catch (const std::invalid_argument& e) {
    fail(kConfig, e.what());
  }
  return s;
}

// The spec as run for one seed: the seed drives model initialization,
// training, promotion sampling and (for gen-data) the generator.
ExperimentSpec for_seed(ExperimentSpec s, std::uint64_t seed) {
  s.seeds = {seed};
  s.train.seed = seed;
  if (s.promotion) s.promotion->seed = seed;
  return s;
}

fs::path prepare_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  const fs::path probe = dir / ".write_probe";
  std::ofstream(probe) << "";
  if (ec || !fs::exists(probe)) fail(kConfig, "output directory not writable: " + dir.string());
  fs::remove(probe);
  return dir;
}

void write_resolved(const ExperimentSpec& s, const fs::path& dir) {
  Json j = to_json(s);
  save_json(j, dir / "resolved_config.json");
}

DatasetManifest load_data(const ExperimentSpec& s) {
  try {
    if (!s.manifest.empty()) {
      if (!fs::exists(s.manifest)) fail(kData, "manifest not found: " + s.manifest);
      return load_manifest(s.manifest);
    }
    return generate_synthetic(*s.data);
  } catch (const ManifestError& e) {
    fail(kData, e.what());
  } catch (const std::invalid_argument& e) {
    fail(kData, e.what());
  }
}

LoadedCheckpoint load_model(const std::string& path) {
  if (path.empty()) fail(kData, "--checkpoint is required");
  if (!fs::exists(path)) fail(kData, "checkpoint not found: " + path);
  try {
    return load_checkpoint(path);
  } catch (const CheckpointError& e) {
    fail(kData, e.what());
  }
}

std::vector<ImageRecord> test_split(const DatasetManifest& m) {
  std::vector<ImageRecord> out;
  for (const auto& r : m.records) {
    if (r.split == Split::kTest) out.push_back(r);
  }
  return out;
}

std::string run_label(const TrainConfig& t, std::size_t num_weak) {
  if (num_weak == 0) return "strong-only baseline";
  return "joint (" + std::string(to_string(t.variant)) + ")";
}

void write_report(const Json& report, const fs::path& path) { save_json(report, path); }

Json eval_json(const EvalReport& r) { return to_json(r); }

// Trains one model on the train split and evaluates it on the test split.
// Writes the checkpoint, loss CSV, report and FROC chart into `dir`.
EvalReport train_and_report(const ExperimentSpec& s, const DatasetManifest& data,
                            const fs::path& dir) {
  const auto strong = data.select(Split::kTrain, Supervision::kStrong);
  const auto weak = data.select(Split::kTrain, Supervision::kWeak);
  if (strong.empty()) fail(kData, "the train split has no strongly annotated images");
  Detector model(s.detector, s.train.seed);
  const std::string label = run_label(s.train, weak.size());
  log("training " + label + ": " + std::to_string(strong.size()) + " strong, " +
      std::to_string(weak.size()) + " weak, " + std::to_string(s.train.iterations) +
      " iterations, seed " + std::to_string(s.train.seed));
  const auto t0 = std::chrono::steady_clock::now();
  const TrainState state = train(model, strong, weak, s.train);
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  log("trained in " + std::to_string(secs) + " s");

  write_loss_csv(state.history, dir / "loss.csv");
  save_checkpoint(model, state.iteration, dir / "model.ckpt",
                  Json{{"train", to_json(s.train)}, {"run_label", label}});

  const auto test = test_split(data);
  EvalReport rep;
  Json report;
  report["run_label"] = label;
  report["seed"] = s.train.seed;
  report["num_strong_train"] = strong.size();
  report["num_weak_train"] = weak.size();
  report["iterations"] = state.iteration;
  report["final_loss"] = state.history.empty() ? Json() : Json(state.history.back().total);
  if (!test.empty()) {
    rep = evaluate(detect(model, test), s.eval);
    report["eval"] = eval_json(rep);
    const std::vector<FrocCurve> curves{{label, rep.froc, {}, {}}};
    write_froc_svg(curves, dir / "froc.svg");
    log("test CorLoc " + std::to_string(rep.corloc) + " [" +
        std::to_string(rep.corloc_ci.low) + ", " + std::to_string(rep.corloc_ci.high) + "]");
  } else {
    report["eval"] = Json();
  }
  write_report(report, dir / "report.json");
  return rep;
}

fs::path seed_dir(const ExperimentSpec& s, std::uint64_t seed) {
  const fs::path root = s.output_dir;
  return s.seeds.size() > 1 ? root / ("seed_" + std::to_string(seed)) : root;
}

int cmd_gen_data(const Options& o) {
  ExperimentSpec s = resolve_spec(o, "gen-data");
  if (!s.data) fail(kConfig, "gen-data needs a 'data' section, not a manifest");
  if (o.seed) s.data->seed = *o.seed;
  s.seeds = {s.data->seed};
  const fs::path dir = prepare_dir(s.output_dir);
  DatasetManifest m;
  try {
    m = generate_synthetic(*s.data);
  } catch (const std::invalid_argument& e) {
    fail(kConfig, e.what());
  }
  save_manifest(m, dir / "manifest.jsonl");
  s.manifest.clear();
  write_resolved(s, dir);
  log("wrote " + std::to_string(m.records.size()) + " records to " +
      (dir / "manifest.jsonl").string());
  return kOk;
}

int cmd_train(const Options& o) {
  const ExperimentSpec spec = resolve_spec(o, "train");
  const DatasetManifest data = load_data(spec);
  for (std::uint64_t seed : spec.seeds) {
    const ExperimentSpec s = for_seed(spec, seed);
    ExperimentSpec resolved = s;
    resolved.output_dir = seed_dir(spec, seed).string();
    const fs::path dir = prepare_dir(resolved.output_dir);
    write_resolved(resolved, dir);
    train_and_report(s, data, dir);
  }
  return kOk;
}

int cmd_eval(const Options& o) {
  const ExperimentSpec s = resolve_spec(o, "eval");
  LoadedCheckpoint ck = load_model(o.checkpoint);
  const DatasetManifest data = load_data(s);
  const auto test = test_split(data);
  if (test.empty()) fail(kData, "the dataset has no test split");
  const fs::path dir = prepare_dir(s.output_dir);
  write_resolved(s, dir);
  const auto raw = detect(ck.model, test);
  const EvalReport rep = evaluate(raw, s.eval);
  save_json(detections_to_json(raw), dir / "detections.json");
  Json report;
  report["checkpoint_iteration"] = ck.iteration;
  report["eval"] = eval_json(rep);
  write_report(report, dir / "report.json");
  const std::vector<FrocCurve> curves{{"model", rep.froc, {}, {}}};
  write_froc_svg(curves, dir / "froc.svg");
  log("CorLoc " + std::to_string(rep.corloc));
  return kOk;
}

int cmd_selftrain(const Options& o) {
  const ExperimentSpec spec = resolve_spec(o, "selftrain");
  const DatasetManifest data = load_data(spec);
  std::optional<LoadedCheckpoint> initial;
  if (!o.checkpoint.empty()) initial = load_model(o.checkpoint);
  for (std::uint64_t seed : spec.seeds) {
    const ExperimentSpec s = for_seed(spec, seed);
    ExperimentSpec resolved = s;
    resolved.output_dir = seed_dir(spec, seed).string();
    const fs::path dir = prepare_dir(resolved.output_dir);
    write_resolved(resolved, dir);
    if (initial && initial->model.config() != s.detector) {
      fail(kConfig, "checkpoint detector config differs from the experiment's");
    }
    log("self-training, seed " + std::to_string(seed));
    const SelfTrainResult res = [&] {
      try {
        return self_train(data, s.detector, s.train, *s.promotion, s.eval,
                          initial ? &initial->model : nullptr);
      } catch (const std::invalid_argument& e) {
        fail(kData, e.what());
      }
    }();
    save_checkpoint(res.initial, res.initial_state.iteration, dir / "initial.ckpt");
    save_checkpoint(res.retrained, res.retrained_state.iteration, dir / "retrained.ckpt");
    if (!initial) write_loss_csv(res.initial_state.history, dir / "loss_initial.csv");
    write_loss_csv(res.retrained_state.history, dir / "loss_retrained.csv");
    for (std::size_t r = 0; r < res.rounds.size(); ++r) {
      write_promotion_report(res.rounds[r],
                             dir / ("promotion_round" + std::to_string(r + 1) + ".jsonl"));
    }
    Json report;
    report["seed"] = seed;
    report["promotion_fraction"] = s.promotion->fraction;
    report["rounds"] = res.rounds.size();
    Json promoted = Json::array();
    for (const auto& r : res.rounds) promoted.push_back(r.promoted.size());
    report["promoted_per_round"] = promoted;
    if (res.initial_eval && res.retrained_eval) {
      const auto& a = *res.initial_eval;
      const auto& b = *res.retrained_eval;
      report["initial_corloc"] = a.corloc;
      report["retrained_corloc"] = b.corloc;
      report["initial"] = eval_json(a);
      report["retrained"] = eval_json(b);
      if (a.indicators.size() >= 2) {
        report["p_value"] = paired_pvalue(b.indicators, a.indicators, s.eval.resamples,
                                          s.eval.bootstrap_seed);
      }
      const std::vector<FrocCurve> curves{{"initial", a.froc, {}, {}},
                                          {"retrained", b.froc, {}, {}}};
      write_froc_svg(curves, dir / "froc.svg");
      log("CorLoc initial " + std::to_string(a.corloc) + " -> retrained " +
          std::to_string(b.corloc));
    }
    write_report(report, dir / "report.json");
  }
  return kOk;
}

void write_sweep_svg(const std::vector<int>& strong_sizes, const std::vector<int>& weak_sizes,
                     const std::map<std::pair<int, int>, std::vector<double>>& cells,
                     const fs::path& path) {
  constexpr double W = 640, H = 420, L = 60, R = 150, T = 30, B = 50;
  static const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd"};
  std::ofstream out(path);
  if (!out) fail(kRuntime, "cannot write " + path.string());
  auto px = [&](std::size_t i) {
    return strong_sizes.size() == 1
               ? (L + W - R) / 2
               : L + (W - L - R) * static_cast<double>(i) / (strong_sizes.size() - 1);
  };
  auto py = [&](double y) { return H - B - (H - T - B) * y; };
  char buf[256];
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
      << "\" font-family=\"sans-serif\" font-size=\"12\">\n"
      << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  std::snprintf(buf, sizeof buf,
                "<line x1=\"%g\" y1=\"%g\" x2=\"%g\" y2=\"%g\" stroke=\"black\"/>\n"
                "<line x1=\"%g\" y1=\"%g\" x2=\"%g\" y2=\"%g\" stroke=\"black\"/>\n",
                L, H - B, W - R, H - B, L, T, L, H - B);
  out << buf;
  for (int i = 0; i <= 5; ++i) {
    std::snprintf(buf, sizeof buf, "<text x=\"%g\" y=\"%g\" text-anchor=\"end\">%.1f</text>\n",
                  L - 6, py(i / 5.0) + 4, i / 5.0);
    out << buf;
  }
  for (std::size_t i = 0; i < strong_sizes.size(); ++i) {
    std::snprintf(buf, sizeof buf, "<text x=\"%g\" y=\"%g\" text-anchor=\"middle\">%d</text>\n",
                  px(i), H - B + 16, strong_sizes[i]);
    out << buf;
  }
  std::snprintf(buf, sizeof buf,
                "<text x=\"%g\" y=\"%g\" text-anchor=\"middle\">strongly annotated images</text>\n"
                "<text x=\"14\" y=\"%g\" text-anchor=\"middle\" "
                "transform=\"rotate(-90 14 %g)\">CorLoc</text>\n",
                (L + W - R) / 2, H - 12, (T + H - B) / 2, (T + H - B) / 2);
  out << buf;
  for (std::size_t wi = 0; wi < weak_sizes.size(); ++wi) {
    const char* color = kColors[wi % 4];
    std::string pts;
    for (std::size_t si = 0; si < strong_sizes.size(); ++si) {
      const auto& v = cells.at({strong_sizes[si], weak_sizes[wi]});
      double mean = 0, lo = 1, hi = 0;
      for (double x : v) {
        mean += x / v.size();
        lo = std::min(lo, x);
        hi = std::max(hi, x);
      }
      std::snprintf(buf, sizeof buf,
                    "<line x1=\"%.2f\" y1=\"%.2f\" x2=\"%.2f\" y2=\"%.2f\" stroke=\"%s\"/>\n"
                    "<circle cx=\"%.2f\" cy=\"%.2f\" r=\"3\" fill=\"%s\"/>\n",
                    px(si), py(lo), px(si), py(hi), color, px(si), py(mean), color);
      out << buf;
      std::snprintf(buf, sizeof buf, "%.2f,%.2f ", px(si), py(mean));
      pts += buf;
    }
    out << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\""
        << pts << "\"/>\n";
    std::snprintf(buf, sizeof buf, "<text x=\"%g\" y=\"%g\" fill=\"%s\">+%d weak</text>\n",
                  W - R + 10, T + 16.0 * (wi + 1), color, weak_sizes[wi]);
    out << buf;
  }
  out << "</svg>\n";
}

int cmd_sweep(const Options& o) {
  const ExperimentSpec spec = resolve_spec(o, "sweep");
  if (!spec.data) fail(kConfig, "sweep needs a 'data' section to size each cell");
  if (spec.sweep_strong.empty() || spec.sweep_weak.empty()) {
    fail(kConfig, "sweep needs non-empty sweep_strong and sweep_weak lists");
  }
  const fs::path root = prepare_dir(spec.output_dir);
  write_resolved(spec, root);
  std::map<std::pair<int, int>, std::vector<double>> cells;
  Json rows = Json::array();
  std::ofstream csv(root / "summary.csv");
  csv << "strong,weak,seed,corloc,ci_low,ci_high\n";
  for (int ns : spec.sweep_strong) {
    for (int nw : spec.sweep_weak) {
      for (std::uint64_t seed : spec.seeds) {
        ExperimentSpec s = for_seed(spec, seed);
        s.data->num_strong_train = ns;
        s.data->num_weak_train = nw;
        s.sweep_strong.clear();
        s.sweep_weak.clear();
        const fs::path dir = prepare_dir(root / "cells" /
                                         ("s" + std::to_string(ns) + "_w" + std::to_string(nw)) /
                                         ("seed_" + std::to_string(seed)));
        s.output_dir = dir.string();
        write_resolved(s, dir);
        DatasetManifest data;
        try {
          data = generate_synthetic(*s.data);
        } catch (const std::invalid_argument& e) {
          fail(kConfig, e.what());
        }
        const EvalReport rep = train_and_report(s, data, dir);
        cells[{ns, nw}].push_back(rep.corloc);
        rows.push_back({{"strong", ns},
                        {"weak", nw},
                        {"seed", seed},
                        {"corloc", rep.corloc},
                        {"ci", to_json(rep.corloc_ci)}});
        char line[160];
        std::snprintf(line, sizeof line, "%d,%d,%llu,%.6f,%.6f,%.6f\n", ns, nw,
                      static_cast<unsigned long long>(seed), rep.corloc, rep.corloc_ci.low,
                      rep.corloc_ci.high);
        csv << line;
      }
    }
  }
  Json summary;
  summary["rows"] = rows;
  Json agg = Json::array();
  for (const auto& [key, v] : cells) {
    double mean = 0;
    for (double x : v) mean += x / v.size();
    agg.push_back({{"strong", key.first}, {"weak", key.second}, {"mean_corloc", mean},
                   {"min_corloc", *std::min_element(v.begin(), v.end())},
                   {"max_corloc", *std::max_element(v.begin(), v.end())}});
  }
  summary["cells"] = agg;
  save_json(summary, root / "summary.json");
  write_sweep_svg(spec.sweep_strong, spec.sweep_weak, cells, root / "sweep.svg");
  log("sweep summary written to " + (root / "summary.json").string());
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Joint weakly and semi-supervised mass detection"};
  app.require_subcommand(1);
  Options o;
  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "experiment JSON file");
    sub->add_option("--seed", o.seed, "single seed overriding the seed list");
    sub->add_option("--out", o.out, "output directory (default $WSOD_OUT_ROOT/<command>)");
    sub->add_option("--manifest", o.manifest, "dataset manifest instead of generated data");
    sub->add_option("--checkpoint", o.checkpoint, "model checkpoint");
    sub->add_option("--variant", o.variant, "combined|alternating")
        ->check(CLI::IsMember({"combined", "alternating"}));
    sub->add_option("--moi", o.moi, "benign|malignant|discriminative|abnormal")
        ->check(CLI::IsMember({"benign", "malignant", "discriminative", "abnormal"}));
    sub->add_option("--alpha", o.alpha, "gradual|static:VALUE");
    sub->add_option("--promote-fraction", o.promote_fraction, "promotion fraction in (0,1)");
  };
  std::map<std::string, int (*)(const Options&)> commands{
      {"gen-data", cmd_gen_data}, {"train", cmd_train},   {"eval", cmd_eval},
      {"selftrain", cmd_selftrain}, {"sweep", cmd_sweep}};
  const std::map<std::string, std::string> help{
      {"gen-data", "generate a synthetic dataset and write its manifest"},
      {"train", "train on the train split and evaluate on the test split"},
      {"eval", "evaluate a checkpoint on the test split"},
      {"selftrain", "train, promote confident weak images, retrain"},
      {"sweep", "train and evaluate over a grid of strong/weak set sizes"}};
  for (const auto& [name, fn] : commands) common(app.add_subcommand(name, help.at(name)));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kUsage;
  }
  try {
    for (const auto& [name, fn] : commands) {
      if (app.got_subcommand(name)) return fn(o);
    }
  } catch (const Failure& f) {
    std::cerr << "error: " << f.message << "\n";
    return f.code;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntime;
  }
  return kUsage;
}
