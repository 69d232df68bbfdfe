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

#include "dars/selftrain.hpp"

#include <cmath>
#include <iostream>

#include "dars/errors.hpp"
#include "dars/json_io.hpp"

namespace dars {

ScaleRange schedule_scale_range(ScaleRange base, double beta_min,
                                double beta_max) {
  if (!(base.lo > 0.0 && base.lo <= base.hi)) {
    throw ConfigError("base scale range must satisfy 0 < lo <= hi");
  }
  if (!(beta_min >= 0.0) || !(beta_max >= 0.0)) {
    throw ConfigError("augmentation betas must be >= 0");
  }
  if (beta_min >= 1.0) throw ConfigError("beta_min must be < 1");
  return {(1.0 - beta_min) * base.lo, (1.0 + beta_max) * base.hi};
}

void RoundSchedule::validate() const {
  if (!(base.lo > 0.0 && base.lo <= base.hi)) {
    throw ConfigError("base scale range must satisfy 0 < lo <= hi");
  }
  if (rounds.empty() || rounds.front().k != 0) {
    throw ConfigError("schedule must start with round 0");
  }
  for (std::size_t i = 0; i < rounds.size(); ++i) {
    const auto& r = rounds[i];
    if (r.epochs < 1) throw ConfigError("round epochs must be >= 1");
    if (r.beta_min < 0.0 || r.beta_max < 0.0) {
      throw ConfigError("augmentation betas must be >= 0");
    }
    if (r.beta_min >= 1.0) throw ConfigError("beta_min must be < 1");
    if (i == 0) continue;
    if (r.k <= rounds[i - 1].k) {
      throw ConfigError("round indices must increase strictly");
    }
    if (!(r.alpha > 0.0 && r.alpha <= 100.0)) {
      throw ConfigError("labeling ratio must be in (0, 100]");
    }
    if (i >= 2 && r.alpha < rounds[i - 1].alpha) {
      throw ConfigError("labeling ratio must not decrease across rounds");
    }
  }
}

RoundSchedule RoundSchedule::two_round(LabelMethod method, int epochs0,
                                       int epochs_k) {
  RoundSchedule s;
  s.base = {0.25, 1.0};
  s.rounds.push_back({0, 0.0, 0.0, 0.0, epochs0, method, false});
  s.rounds.push_back({1, 20.0, 0.0, 0.0, epochs_k, method, false});
  s.rounds.push_back({2, 50.0, 0.2, 0.5, epochs_k, method, false});
  return s;
}

// --- corpora ----------------------------------------------------------------

Corpora Corpora::from_scenes(const SceneConfig& cfg, std::size_t n_labeled,
                             std::size_t n_unlabeled, std::size_t n_test,
                             const ExecOptions& exec) {
  Corpora c;
  c.num_classes = cfg.num_classes;
  auto fill = [&](ImageSet& set, char prefix, std::uint64_t first,
                  std::size_t n) {
    auto scenes = generate_scenes(cfg, first, n, exec);
    for (std::size_t i = 0; i < n; ++i) {
      char buf[32];
      std::snprintf(buf, sizeof buf, "%c%06zu", prefix, i);
      set.ids.emplace_back(buf);
      set.images.push_back(std::move(scenes[i].features));
      set.labels.push_back(std::move(scenes[i].labels));
    }
  };
  fill(c.labeled, 'l', 0, n_labeled);
  fill(c.unlabeled, 'u', n_labeled, n_unlabeled);
  fill(c.test, 't', n_labeled + n_unlabeled, n_test);
  return c;
}

Corpora Corpora::from_manifests(const DatasetManifest& labeled,
                                const DatasetManifest& unlabeled,
                                const DatasetManifest& test) {
  if (labeled.num_classes != unlabeled.num_classes ||
      labeled.num_classes != test.num_classes) {
    throw ManifestError("corpus manifests disagree on num_classes");
  }
  auto load = [](const DatasetManifest& m, bool need_labels) {
    ImageSet set;
    bool all_labels = true;
    for (const auto& e : m.entries) all_labels = all_labels && e.label_path;
    if (need_labels && !all_labels) {
      throw ManifestError("labeled/test manifests need label_path on every entry");
    }
    for (const auto& e : m.entries) {
      if (!e.image_path) {
        throw ManifestError("entry '" + e.image_id + "' has no image_path");
      }
      set.ids.push_back(e.image_id);
      set.images.push_back(load_features(*e.image_path));
      if (all_labels) {
        set.labels.push_back(load_label_map(*e.label_path, m.num_classes));
      }
    }
    return set;
  };
  Corpora c;
  c.num_classes = labeled.num_classes;
  c.labeled = load(labeled, true);
  c.unlabeled = load(unlabeled, false);
  c.test = load(test, true);
  return c;
}

ModelProbabilitySource::ModelProbabilitySource(
    const LinearPixelModel& model, const ImageSet& images,
    std::optional<Temperature> temperature)
    : model_(model), images_(images), temperature_(temperature) {}

std::shared_ptr<const ProbabilityVolume> ModelProbabilitySource::load(
    std::size_t i) const {
  auto pred = predict_image(model_, images_.images[i]);
  if (temperature_) {
    return std::make_shared<const ProbabilityVolume>(
        apply_temperature(pred.logits, *temperature_));
  }
  return std::make_shared<const ProbabilityVolume>(std::move(pred.probs));
}

std::vector<LabelMap> predict_labels(const LinearPixelModel& model,
                                     const ImageSet& set,
                                     const ExecOptions& exec) {
  std::vector<LabelMap> out(set.size());
  parallel_for(set.size(), exec.threads, [&](std::size_t i) {
    out[i] = argmax_map(predict_image(model, set.images[i]).logits);
  });
  return out;
}

// --- rounds -----------------------------------------------------------------

namespace {

std::vector<TrainingImage> training_refs(const ImageSet& set,
                                         std::span<const LabelMap> labels) {
  std::vector<TrainingImage> out;
  for (std::size_t i = 0; i < set.size(); ++i) {
    out.push_back({&set.images[i], &labels[i]});
  }
  return out;
}

double pseudo_accuracy(std::span<const LabelMap> pseudo,
                       std::span<const LabelMap> truth) {
  std::uint64_t labeled = 0;
  std::uint64_t correct = 0;
  for (std::size_t k = 0; k < pseudo.size(); ++k) {
    const auto p = pseudo[k].values();
    const auto t = truth[k].values();
    for (std::size_t i = 0; i < p.size(); ++i) {
      if (p[i] == kIgnore || t[i] == kIgnore) continue;
      ++labeled;
      if (p[i] == t[i]) ++correct;
    }
  }
  return labeled ? static_cast<double>(correct) / static_cast<double>(labeled)
                 : std::nan("");
}

}  // namespace

RoundState run_round(const RoundState& prev, const RoundSpec& spec,
                     const Corpora& corpora, const PipelineConfig& cfg) {
  const auto labeled_train = training_refs(corpora.labeled, corpora.labeled.labels);
  TrainConfig tc = cfg.train;
  tc.epochs = spec.epochs;
  tc.seed = mix(cfg.seed, static_cast<std::uint64_t>(spec.k));

  RoundState next;
  next.k = spec.k;
  next.record.k = spec.k;

  if (spec.k == 0) {
    next.scale = schedule_scale_range(cfg.schedule.base, spec.beta_min,
                                      spec.beta_max);
    tc.augment = next.scale;
    next.teacher = LinearPixelModel::zeros(corpora.num_classes);
    auto trained = train(next.teacher, labeled_train, {}, tc, cfg.exec);
    next.student = std::move(trained.model);
    next.record.trace = std::move(trained.trace);
  } else {
    if (corpora.unlabeled.size() == 0) {
      throw EmptyDatasetError("self-training round needs unlabeled images");
    }
    next.teacher = prev.student;
    std::optional<Temperature> temperature;
    if (spec.use_ts) {
      std::vector<LogitVolume> logits;
      for (const auto& img : corpora.labeled.images) {
        logits.push_back(predict_image(next.teacher, img).logits);
      }
      temperature = fit_temperature(logits, corpora.labeled.labels).temperature;
      next.record.temperature = temperature->value();
    }
    const ClassDistribution target =
        label_frequencies(corpora.labeled.labels, corpora.num_classes);
    const ModelProbabilitySource source(next.teacher, corpora.unlabeled,
                                        temperature);
    PseudoLabelResult pl = run_labeling(spec.method, source, spec.alpha, &target,
                                        mix(cfg.seed, 0x5EEDULL + spec.k),
                                        cfg.exec);
    next.pseudo = std::move(pl.labels);
    pl.labels.clear();
    next.record.pseudo = std::move(pl);
    if (corpora.unlabeled.labels.size() == corpora.unlabeled.size()) {
      next.record.pseudo_accuracy =
          pseudo_accuracy(next.pseudo, corpora.unlabeled.labels);
    }

    next.scale = schedule_scale_range(prev.scale, spec.beta_min, spec.beta_max);
    tc.augment = next.scale;
    const auto pseudo_train = training_refs(corpora.unlabeled, next.pseudo);
    auto trained = train(next.teacher, labeled_train, pseudo_train, tc, cfg.exec);
    next.student = std::move(trained.model);
    next.record.trace = std::move(trained.trace);
  }
  next.record.scale = next.scale;
  next.record.eval = evaluate(predict_labels(next.student, corpora.test, cfg.exec),
                              corpora.test.labels, cfg.eval);
  return next;
}

namespace {

void write_round(const fs::path& dir, const RoundState& state,
                 const Corpora& corpora) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string());
  save_model(state.student, dir / "model");
  write_file_atomic(dir / "loss_trace.csv", loss_trace_csv(state.record.trace));
  json eval = to_json(state.record.eval);
  eval["round"] = state.k;
  eval["scale_range"] = {state.scale.lo, state.scale.hi};
  write_file_atomic(dir / "eval.json", dump(eval));
  write_file_atomic(dir / "per_class_iou.csv", iou_csv(state.record.eval));
  if (!state.record.pseudo) return;

  json report = to_json(*state.record.pseudo);
  if (state.record.temperature) report["temperature"] = *state.record.temperature;
  if (state.record.pseudo_accuracy) {
    report["pseudo_accuracy"] = *state.record.pseudo_accuracy;
  }
  write_file_atomic(dir / "pseudo_report.json", dump(report));
  fs::create_directories(dir / "pseudo", ec);
  DatasetManifest m;
  m.num_classes = corpora.num_classes;
  for (std::size_t i = 0; i < state.pseudo.size(); ++i) {
    ManifestEntry e;
    e.image_id = corpora.unlabeled.ids[i];
    e.label_path = dir / "pseudo" / (e.image_id + ".tensor");
    write_tensor(state.pseudo[i].to_tensor(), *e.label_path);
    m.entries.push_back(std::move(e));
  }
  save_manifest(m, dir / "pseudo" / "manifest.json");
}

}  // namespace

PipelineResult run_pipeline(const Corpora& corpora, const PipelineConfig& cfg,
                            const std::optional<fs::path>& run_dir) {
  cfg.schedule.validate();
  if (corpora.labeled.size() == 0) {
    throw EmptyDatasetError("no labeled images");
  }
  PipelineResult result;
  RoundState state;
  state.scale = cfg.schedule.base;
  for (const auto& spec : cfg.schedule.rounds) {
    state = run_round(state, spec, corpora, cfg);
    std::clog << "[selftrain] round " << spec.k << " miou "
              << state.record.eval.miou << " tail_miou "
              << state.record.eval.tail_miou << '\n';
    if (run_dir) {
      write_round(*run_dir / ("round_" + std::to_string(spec.k)), state, corpora);
    }
    state.pseudo.clear();
    result.rounds.push_back(state.record);
  }
  result.final_model = state.student;
  if (run_dir) {
    json summary = json::array();
    for (const auto& r : result.rounds) {
      json item = {{"round", r.k},
                   {"miou", r.eval.miou},
                   {"tail_miou", r.eval.tail_miou},
                   {"scale_range", {r.scale.lo, r.scale.hi}}};
      if (r.pseudo) {
        item["method"] = method_name(r.pseudo->method);
        item["alpha"] = r.pseudo->alpha;
        item["kl_to_target"] = r.pseudo->kl_to_target;
      }
      summary.push_back(std::move(item));
    }
    write_file_atomic(*run_dir / "summary.json", dump(summary));
  }
  return result;
}

}  // namespace dars
