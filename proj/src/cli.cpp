// Copyright 2026 The darslab Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "dars/cli.hpp"

#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "dars/calibration.hpp"
#include "dars/distribution.hpp"
#include "dars/errors.hpp"
#include "dars/json_io.hpp"
#include "dars/pseudo_label.hpp"
#include "dars/scenegen.hpp"
#include "dars/selftrain.hpp"
#include "dars/toymodel.hpp"

namespace dars {
namespace {

struct Globals {
  std::size_t threads = 0;
  std::optional<std::uint64_t> seed;

  ExecOptions exec(std::size_t shards = 0) const {
    ExecOptions e;
    e.threads = threads ? threads : default_threads();
    e.shards = shards ? shards : e.threads;
    return e;
  }
};

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
}

std::vector<LabelMap> load_labels(const DatasetManifest& m) {
  std::vector<LabelMap> out;
  for (const auto& e : m.entries) {
    if (!e.label_path) {
      throw ManifestError("entry '" + e.image_id + "' has no label_path");
    }
    out.push_back(load_label_map(*e.label_path, m.num_classes));
  }
  return out;
}

// --- stats --------------------------------------------------------------------

struct StatsArgs {
  std::string labels;
  std::string out;
};

void add_stats(CLI::App& app, StatsArgs& a) {
  auto* sub = app.add_subcommand("stats", "Class distribution of a labeled manifest");
  sub->add_option("--labels", a.labels, "Manifest with label_path entries")->required();
  sub->add_option("--out", a.out, "Distribution JSON")->required();
}

int run_stats(const StatsArgs& a, std::ostream& out) {
  const auto m = load_manifest(a.labels);
  const auto d = label_frequencies(load_labels(m), m.num_classes);
  write_file_atomic(a.out, dump(to_json(d)));
  fs::path csv = a.out;
  csv.replace_extension(".csv");
  write_file_atomic(csv, distribution_csv(d));
  out << a.out << '\n';
  return 0;
}

// --- label --------------------------------------------------------------------

struct LabelArgs {
  std::string method = "dars";
  double alpha = 20.0;
  std::string target;
  std::string temperature = "none";
  std::string preds;
  std::string out;
  std::string report;
  std::size_t shards = 0;
};

void add_label(CLI::App& app, LabelArgs& a) {
  auto* sub = app.add_subcommand("label", "Generate pseudo labels");
  sub->add_option("--method", a.method, "st, cbst or dars")
      ->check(CLI::IsMember({"st", "cbst", "dars"}));
  sub->add_option("--alpha", a.alpha, "Labeling ratio in percent")
      ->check(CLI::Range(0.0, 100.0));
  sub->add_option("--target", a.target, "Target distribution JSON");
  sub->add_option("--temperature", a.temperature,
                  "Calibration JSON, or none");
  sub->add_option("--preds", a.preds, "Prediction manifest")->required();
  sub->add_option("--out", a.out, "Output directory")->required();
  sub->add_option("--report", a.report, "Report JSON (default <out>/report.json)");
  sub->add_option("--shards", a.shards, "Work shards (default: threads)");
}

int run_label(const LabelArgs& a, const Globals& g, std::ostream& out) {
  const LabelMethod method = parse_method(a.method);
  if (method == LabelMethod::kDars && a.target.empty()) {
    throw ConfigError("--target is required for --method dars");
  }
  const auto preds = load_manifest(a.preds);
  std::unique_ptr<ProbabilitySource> source;
  if (a.temperature != "none") {
    const Temperature t(read_json(a.temperature).at("temperature").get<double>());
    source = std::make_unique<TemperedLogitSource>(preds, t);
  } else {
    bool all_probs = true;
    for (const auto& e : preds.entries) all_probs = all_probs && e.prob_path;
    if (all_probs) {
      source = std::make_unique<ManifestProbabilities>(preds);
    } else {
      source = std::make_unique<TemperedLogitSource>(preds, Temperature(1.0));
    }
  }
  std::optional<ClassDistribution> target;
  if (!a.target.empty()) target = load_distribution(a.target);
  const std::uint64_t seed = g.seed.value_or(0);
  const ExecOptions exec = g.exec(a.shards);
  auto result = run_labeling(method, *source, a.alpha,
                             target ? &*target : nullptr, seed, exec);

  const fs::path out_dir = a.out;
  ensure_dir(out_dir);
  DatasetManifest m;
  m.num_classes = preds.num_classes;
  m.entries.resize(result.labels.size());
  parallel_for(result.labels.size(), exec.threads, [&](std::size_t i) {
    ManifestEntry e;
    e.image_id = result.image_ids[i];
    e.image_path = preds.entries[i].image_path;
    e.label_path = out_dir / (e.image_id + ".tensor");
    write_tensor(result.labels[i].to_tensor(), *e.label_path);
    m.entries[i] = std::move(e);
  });
  save_manifest(m, out_dir / "manifest.json");
  const fs::path report = a.report.empty() ? out_dir / "report.json" : fs::path(a.report);
  write_file_atomic(report, dump(to_json(result)));
  out << report.string() << '\n';
  return 0;
}

// --- calibrate ----------------------------------------------------------------

struct CalibrateArgs {
  std::string preds;
  std::string labels;
  std::string out;
};

void add_calibrate(CLI::App& app, CalibrateArgs& a) {
  auto* sub = app.add_subcommand("calibrate", "Fit a softmax temperature");
  sub->add_option("--preds", a.preds, "Manifest with logit_path entries")->required();
  sub->add_option("--labels", a.labels,
                  "Manifest with label_path entries (default: --preds)");
  sub->add_option("--out", a.out, "Temperature JSON")->required();
}

int run_calibrate(const CalibrateArgs& a, std::ostream& out) {
  const auto preds = load_manifest(a.preds);
  const auto labels = a.labels.empty() ? preds : load_manifest(a.labels);
  std::map<std::string, const ManifestEntry*> by_id;
  for (const auto& e : labels.entries) by_id[e.image_id] = &e;
  std::vector<LogitVolume> logits;
  std::vector<LabelMap> truth;
  for (const auto& e : preds.entries) {
    const auto it = by_id.find(e.image_id);
    if (!e.logit_path) {
      throw ManifestError("entry '" + e.image_id + "' has no logit_path");
    }
    if (it == by_id.end() || !it->second->label_path) {
      throw ManifestError("no label for '" + e.image_id + "'");
    }
    logits.push_back(load_logits(*e.logit_path));
    truth.push_back(load_label_map(*it->second->label_path, preds.num_classes));
  }
  const auto fit = fit_temperature(logits, truth);
  const json j = {{"temperature", fit.temperature.value()},
                  {"nll_before", fit.nll_before},
                  {"nll_after", fit.nll_after}};
  write_file_atomic(a.out, dump(j));
  out << a.out << '\n';
  return 0;
}

// --- synth --------------------------------------------------------------------

struct SynthArgs {
  std::string config;
  std::string out;
  std::size_t labeled = 64;
  std::size_t unlabeled = 256;
  std::size_t test = 64;
};

void add_synth(CLI::App& app, SynthArgs& a) {
  auto* sub = app.add_subcommand("synth", "Generate a synthetic corpus");
  sub->add_option("--config", a.config, "Scene config JSON (default preset)");
  sub->add_option("--out", a.out, "Output directory")->required();
  sub->add_option("--labeled", a.labeled, "Labeled images");
  sub->add_option("--unlabeled", a.unlabeled, "Unlabeled images");
  sub->add_option("--test", a.test, "Test images");
}

int run_synth(const SynthArgs& a, const Globals& g, std::ostream& out) {
  SceneConfig cfg = a.config.empty() ? SceneConfig::default_preset()
                                     : scene_config_from_json(read_json(a.config));
  if (g.seed) cfg.seed = *g.seed;
  cfg.validate();
  const fs::path dir = a.out;
  ensure_dir(dir);
  const auto ds = generate_dataset(cfg, a.labeled, a.unlabeled, a.test, dir, g.exec());
  write_file_atomic(dir / "scene.json", dump(to_json(cfg)));
  write_file_atomic(dir / "labeled_stats.json", dump(to_json(ds.labeled_distribution)));
  const json eval_cfg = {{"tail_classes", cfg.tail_classes()}, {"groups", cfg.groups()}};
  write_file_atomic(dir / "eval_config.json", dump(eval_cfg));
  out << (dir / "labeled.json").string() << '\n';
  return 0;
}

// --- train --------------------------------------------------------------------

struct TrainArgs {
  std::string labeled;
  std::string pseudo;
  std::string config;
  std::string init;
  std::string out;
};

void add_train(CLI::App& app, TrainArgs& a) {
  auto* sub = app.add_subcommand("train", "Train the pixel classifier");
  sub->add_option("--labeled", a.labeled, "Labeled manifest")->required();
  sub->add_option("--pseudo", a.pseudo, "Pseudo-labeled manifest");
  sub->add_option("--config", a.config, "Train config JSON");
  sub->add_option("--init", a.init, "Model directory to resume from");
  sub->add_option("--out", a.out, "Model directory")->required();
}

int run_train(const TrainArgs& a, const Globals& g, std::ostream& out) {
  TrainConfig cfg = a.config.empty() ? TrainConfig{}
                                     : train_config_from_json(read_json(a.config));
  if (g.seed) cfg.seed = *g.seed;
  const auto labeled = load_manifest(a.labeled);
  std::optional<DatasetManifest> pseudo;
  if (!a.pseudo.empty()) pseudo = load_manifest(a.pseudo);
  const LinearPixelModel init = a.init.empty()
                                    ? LinearPixelModel::zeros(labeled.num_classes)
                                    : load_model(a.init);
  const auto result = train(init, labeled, pseudo ? &*pseudo : nullptr, cfg, g.exec());
  const fs::path dir = a.out;
  save_model(result.model, dir);
  write_file_atomic(dir / "loss_trace.csv", loss_trace_csv(result.trace));
  out << dir.string() << '\n';
  return 0;
}

// --- predict ------------------------------------------------------------------

struct PredictArgs {
  std::string model;
  std::string images;
  std::string out;
};

void add_predict(CLI::App& app, PredictArgs& a) {
  auto* sub = app.add_subcommand("predict", "Write logits and probabilities");
  sub->add_option("--model", a.model, "Model directory")->required();
  sub->add_option("--images", a.images, "Manifest with image_path entries")->required();
  sub->add_option("--out", a.out, "Output directory")->required();
}

int run_predict(const PredictArgs& a, const Globals& g, std::ostream& out) {
  const auto model = load_model(a.model);
  const auto images = load_manifest(a.images);
  predict_corpus(model, images, a.out, g.exec());
  out << (fs::path(a.out) / "predictions.json").string() << '\n';
  return 0;
}

// --- selftrain ----------------------------------------------------------------

struct SelftrainArgs {
  std::string config;
  std::string out;
};

void add_selftrain(CLI::App& app, SelftrainArgs& a) {
  auto* sub = app.add_subcommand("selftrain", "Run the self-training schedule");
  sub->add_option("--config", a.config, "Pipeline config JSON")->required();
  sub->add_option("--out", a.out, "Run directory")->required();
}

int run_selftrain(const SelftrainArgs& a, const Globals& g, std::ostream& out) {
  const json j = read_json(a.config);
  const fs::path base = fs::path(a.config).parent_path();
  PipelineConfig cfg;
  cfg.exec = g.exec();
  cfg.seed = g.seed ? *g.seed : j.value("seed", std::uint64_t{0});
  cfg.train = j.contains("train") ? train_config_from_json(j.at("train")) : TrainConfig{};
  cfg.schedule = j.contains("schedule")
                     ? schedule_from_json(j.at("schedule"))
                     : RoundSchedule::two_round(LabelMethod::kDars, cfg.train.epochs,
                                                std::max(1, cfg.train.epochs / 4));
  Corpora corpora;
  EvalOptions eval_defaults;
  if (j.contains("corpus")) {
    const auto& c = j.at("corpus");
    auto path = [&](const char* key) {
      const fs::path p = c.at(key).get<std::string>();
      return p.is_absolute() ? p : base / p;
    };
    corpora = Corpora::from_manifests(load_manifest(path("labeled")),
                                      load_manifest(path("unlabeled")),
                                      load_manifest(path("test")));
  } else {
    const SceneConfig scene = j.contains("scene") ? scene_config_from_json(j.at("scene"))
                                                  : SceneConfig::default_preset();
    scene.validate();
    const json counts = j.value("counts", json::object());
    corpora = Corpora::from_scenes(scene, counts.value("labeled", std::size_t{64}),
                                   counts.value("unlabeled", std::size_t{256}),
                                   counts.value("test", std::size_t{64}), cfg.exec);
    eval_defaults.tail_classes = scene.tail_classes();
    eval_defaults.groups = scene.groups();
  }
  cfg.eval = j.contains("eval") ? eval_options_from_json(j.at("eval"), eval_defaults)
                                : eval_defaults;
  const fs::path dir = a.out;
  ensure_dir(dir);
  run_pipeline(corpora, cfg, dir);
  out << (dir / "summary.json").string() << '\n';
  return 0;
}

// --- eval ---------------------------------------------------------------------

struct EvalArgs {
  std::string pred;
  std::string truth;
  std::string report;
  std::string config;
};

void add_eval(CLI::App& app, EvalArgs& a) {
  auto* sub = app.add_subcommand("eval", "Score predictions against truth");
  sub->add_option("--pred", a.pred, "Prediction manifest")->required();
  sub->add_option("--truth", a.truth, "Truth manifest")->required();
  sub->add_option("--report", a.report, "Report JSON")->required();
  sub->add_option("--config", a.config,
                  "Eval options JSON (tail_classes, size_edges, groups)");
}

int run_eval(const EvalArgs& a, std::ostream& out) {
  const EvalOptions opts = a.config.empty()
                               ? EvalOptions{}
                               : eval_options_from_json(read_json(a.config), {});
  const auto report = evaluate(load_manifest(a.pred), load_manifest(a.truth), opts);
  write_file_atomic(a.report, dump(to_json(report)));
  fs::path csv = a.report;
  csv.replace_extension(".csv");
  write_file_atomic(csv, iou_csv(report));
  out << a.report << '\n';
  return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out,
            std::ostream& err) {
  CLI::App app{"Distribution-aligned pseudo labeling and self-training lab", "dars"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  std::uint64_t seed = 0;
  app.add_option("--threads", g.threads, "Worker threads (default: all cores)");
  auto* seed_opt = app.add_option("--seed", seed, "Random seed");

  StatsArgs stats;
  LabelArgs label;
  CalibrateArgs calibrate;
  SynthArgs synth;
  TrainArgs train_args;
  PredictArgs predict;
  SelftrainArgs selftrain;
  EvalArgs eval;
  add_stats(app, stats);
  add_label(app, label);
  add_calibrate(app, calibrate);
  add_synth(app, synth);
  add_train(app, train_args);
  add_predict(app, predict);
  add_selftrain(app, selftrain);
  add_eval(app, eval);

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "dars: " << e.what() << '\n' << app.help();
    return 2;
  }
  if (seed_opt->count() > 0) g.seed = seed;

  const std::string name = app.get_subcommands().front()->get_name();
  try {
    if (name == "stats") return run_stats(stats, out);
    if (name == "label") return run_label(label, g, out);
    if (name == "calibrate") return run_calibrate(calibrate, out);
    if (name == "synth") return run_synth(synth, g, out);
    if (name == "train") return run_train(train_args, g, out);
    if (name == "predict") return run_predict(predict, g, out);
    if (name == "selftrain") return run_selftrain(selftrain, g, out);
    if (name == "eval") return run_eval(eval, out);
  } catch (const Error& e) {
    err << "dars " << name << ": " << e.kind() << ": " << e.what() << '\n';
    return 1;
  } catch (const nlohmann::json::exception& e) {
    err << "dars " << name << ": ConfigError: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    err << "dars " << name << ": " << e.what() << '\n';
    return 1;
  }
  return 2;
}

}  // namespace dars
