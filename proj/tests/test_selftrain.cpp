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

#include <gtest/gtest.h>

#include <cmath>

#include "dars/errors.hpp"
#include "dars/json_io.hpp"
#include "dars/selftrain.hpp"
#include "test_util.hpp"

namespace dars {
namespace {

TEST(Evaluate, HandConfusion) {
  const std::vector<LabelMap> truth = {LabelMap(2, 2, 2, {0, 0, 1, 1})};
  const std::vector<LabelMap> pred = {LabelMap(2, 2, 2, {0, 1, 1, 1})};
  const auto r = evaluate(pred, truth, {});
  EXPECT_DOUBLE_EQ(r.per_class_iou[0], 0.5);
  EXPECT_DOUBLE_EQ(r.per_class_iou[1], 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(r.miou, 7.0 / 12.0);
  EXPECT_EQ(r.confusion, (std::vector<std::uint64_t>{1, 1, 0, 2}));
  EXPECT_DOUBLE_EQ(r.pixel_accuracy, 0.75);
}

TEST(Evaluate, PerfectPrediction) {
  Rng rng(1);
  const std::vector<LabelMap> truth = {testing::random_labels(rng, 8, 8, 5, 0.0)};
  const auto r = evaluate(truth, truth, {});
  for (int j = 0; j < 5; ++j) {
    if (r.present[static_cast<std::size_t>(j)]) EXPECT_EQ(r.per_class_iou[static_cast<std::size_t>(j)], 1.0);
  }
  EXPECT_EQ(r.miou, 1.0);
}

TEST(Evaluate, DisjointSingleClassMaps) {
  const std::vector<LabelMap> truth = {LabelMap::filled(2, 2, 2, 0)};
  const std::vector<LabelMap> pred = {LabelMap::filled(2, 2, 2, 1)};
  const auto r = evaluate(pred, truth, {});
  EXPECT_EQ(r.per_class_iou[0], 0.0);
  EXPECT_EQ(r.per_class_iou[1], 0.0);
  EXPECT_EQ(r.miou, 0.0);
}

TEST(Evaluate, IgnoreHandling) {
  // Truth IGNORE is skipped; a predicted IGNORE counts as a miss.
  const std::vector<LabelMap> truth = {LabelMap(1, 3, 2, {0, kIgnore, 1})};
  const std::vector<LabelMap> pred = {LabelMap(1, 3, 2, {0, 1, kIgnore})};
  const auto r = evaluate(pred, truth, {});
  EXPECT_EQ(r.per_class_iou[0], 1.0);
  EXPECT_EQ(r.per_class_iou[1], 0.0);
  EXPECT_EQ(r.missed[1], 1u);
  EXPECT_DOUBLE_EQ(r.pixel_accuracy, 0.5);
}

TEST(Evaluate, TailAndGroups) {
  const std::vector<LabelMap> truth = {LabelMap(1, 4, 3, {0, 1, 2, 2})};
  const std::vector<LabelMap> pred = {LabelMap(1, 4, 3, {0, 1, 2, 0})};
  EvalOptions opts;
  opts.tail_classes = {1, 2};
  opts.groups = {{0}, {1, 2}};
  const auto r = evaluate(pred, truth, opts);
  EXPECT_DOUBLE_EQ(r.per_class_iou[0], 0.5);
  EXPECT_DOUBLE_EQ(r.per_class_iou[2], 0.5);
  EXPECT_DOUBLE_EQ(r.tail_miou, 0.75);
  ASSERT_EQ(r.group_miou.size(), 2u);
  EXPECT_DOUBLE_EQ(r.group_miou[0], 0.5);
  EXPECT_DOUBLE_EQ(r.group_miou[1], 0.75);
}

TEST(Evaluate, SizeBucketsUseFourConnectivity) {
  // Two diagonal class-1 pixels are separate components of area 1; the
  // class-0 region is one component of area 7.
  const std::vector<LabelMap> truth = {LabelMap(3, 3, 2, {1, 0, 0, 0, 1, 0, 0, 0, 0})};
  const std::vector<LabelMap> pred = {LabelMap(3, 3, 2, {1, 0, 0, 0, 0, 0, 0, 0, 0})};
  EvalOptions opts;
  opts.size_edges = {0, 2, 8};
  const auto r = evaluate(pred, truth, opts);
  ASSERT_EQ(r.accuracy_by_size.size(), 3u);
  EXPECT_EQ(r.accuracy_by_size[0].components, 2u);
  EXPECT_EQ(r.accuracy_by_size[0].pixels, 2u);
  EXPECT_DOUBLE_EQ(r.accuracy_by_size[0].accuracy, 0.5);
  EXPECT_EQ(r.accuracy_by_size[1].components, 1u);
  EXPECT_EQ(r.accuracy_by_size[1].pixels, 7u);
  EXPECT_DOUBLE_EQ(r.accuracy_by_size[1].accuracy, 1.0);
  EXPECT_EQ(r.accuracy_by_size[2].components, 0u);
  EXPECT_TRUE(std::isnan(r.accuracy_by_size[2].accuracy));
}

TEST(Evaluate, ShapeMismatch) {
  const std::vector<LabelMap> a = {LabelMap::filled(2, 2, 2, 0)};
  const std::vector<LabelMap> b = {LabelMap::filled(2, 3, 2, 0)};
  EXPECT_THROW(evaluate(a, b, {}), ShapeError);
}

TEST(Schedule, Formula) {
  const auto a = schedule_scale_range({0.25, 1.0}, 0.2, 0.5);
  EXPECT_DOUBLE_EQ(a.lo, 0.2);
  EXPECT_DOUBLE_EQ(a.hi, 1.5);
  const auto b = schedule_scale_range({0.5, 2.0}, 0.5, 0.25);
  EXPECT_DOUBLE_EQ(b.lo, 0.25);
  EXPECT_DOUBLE_EQ(b.hi, 2.5);
  const auto c = schedule_scale_range({0.3, 0.9}, 0.0, 0.0);
  EXPECT_EQ(c, (ScaleRange{0.3, 0.9}));
  EXPECT_THROW(schedule_scale_range({0.25, 1.0}, 1.0, 0.0), ConfigError);
  EXPECT_THROW(schedule_scale_range({0.25, 1.0}, -0.1, 0.0), ConfigError);
}

TEST(Schedule, TwoRoundDefaults) {
  const auto s = RoundSchedule::two_round(LabelMethod::kDars, 10, 5);
  ASSERT_EQ(s.rounds.size(), 3u);
  EXPECT_EQ(s.rounds[1].alpha, 20.0);
  EXPECT_EQ(s.rounds[2].alpha, 50.0);
  EXPECT_EQ(s.rounds[2].beta_min, 0.2);
  EXPECT_EQ(s.rounds[2].beta_max, 0.5);
  EXPECT_NO_THROW(s.validate());
}

TEST(Schedule, Validation) {
  auto s = RoundSchedule::two_round(LabelMethod::kDars, 1, 1);
  s.rounds[2].alpha = 10;
  EXPECT_THROW(s.validate(), ConfigError);
  s = RoundSchedule::two_round(LabelMethod::kDars, 1, 1);
  s.rounds[2].k = 1;
  EXPECT_THROW(s.validate(), ConfigError);
  s = RoundSchedule::two_round(LabelMethod::kDars, 1, 1);
  s.rounds[0].k = 1;
  EXPECT_THROW(s.validate(), ConfigError);
  s = RoundSchedule::two_round(LabelMethod::kDars, 1, 1);
  s.rounds[1].beta_max = -1;
  EXPECT_THROW(s.validate(), ConfigError);
}

TEST(Schedule, JsonRoundTripOfFields) {
  const json j = {{"base_scale", {0.5, 1.0}},
                  {"rounds",
                   {{{"k", 0}, {"epochs", 2}},
                    {{"k", 1}, {"alpha", 30}, {"beta_min", 0.1}, {"beta_max", 0.2},
                     {"epochs", 3}, {"method", "cbst"}, {"use_ts", true}}}}};
  const auto s = schedule_from_json(j);
  EXPECT_EQ(s.base, (ScaleRange{0.5, 1.0}));
  ASSERT_EQ(s.rounds.size(), 2u);
  EXPECT_EQ(s.rounds[1].method, LabelMethod::kCbst);
  EXPECT_TRUE(s.rounds[1].use_ts);
  EXPECT_EQ(s.rounds[1].epochs, 3);
}

Corpora small_corpora() {
  auto cfg = SceneConfig::default_preset(3);
  cfg.height = cfg.width = 24;
  return Corpora::from_scenes(cfg, 6, 10, 4, {1, 2});
}

PipelineConfig small_config(LabelMethod method) {
  PipelineConfig cfg;
  cfg.schedule = RoundSchedule::two_round(method, 2, 1);
  cfg.train.learning_rate = 5.0;
  cfg.seed = 5;
  cfg.exec = {2, 2};
  return cfg;
}

TEST(Pipeline, RoundZeroOnlyEqualsSupervisedTraining) {
  const auto corpora = small_corpora();
  auto cfg = small_config(LabelMethod::kDars);
  cfg.schedule.rounds.resize(1);
  const auto r = run_pipeline(corpora, cfg);

  std::vector<TrainingImage> refs;
  for (std::size_t i = 0; i < corpora.labeled.size(); ++i) {
    refs.push_back({&corpora.labeled.images[i], &corpora.labeled.labels[i]});
  }
  TrainConfig tc = cfg.train;
  tc.epochs = 2;
  tc.seed = mix(cfg.seed, 0);
  tc.augment = cfg.schedule.base;
  const auto direct = train(LinearPixelModel::zeros(20), refs, {}, tc);
  EXPECT_EQ(r.final_model, direct.model);
}

TEST(Pipeline, TeacherIsPreviousStudent) {
  const auto corpora = small_corpora();
  const auto cfg = small_config(LabelMethod::kDars);
  RoundState state;
  state.scale = cfg.schedule.base;
  std::vector<RoundState> states;
  for (const auto& spec : cfg.schedule.rounds) {
    state = run_round(state, spec, corpora, cfg);
    states.push_back(state);
  }
  EXPECT_EQ(states[1].teacher, states[0].student);
  EXPECT_EQ(states[2].teacher, states[1].student);
  EXPECT_EQ(states[2].scale, (ScaleRange{0.2, 1.5}));
  EXPECT_EQ(states[1].scale, (ScaleRange{0.25, 1.0}));
  ASSERT_TRUE(states[1].record.pseudo.has_value());
  EXPECT_TRUE(states[1].record.pseudo->labels.empty());
  EXPECT_EQ(states[1].pseudo.size(), corpora.unlabeled.size());
}

TEST(Pipeline, DeterministicArtifacts) {
  testing::TempDir dir;
  const auto corpora = small_corpora();
  auto cfg = small_config(LabelMethod::kDars);
  run_pipeline(corpora, cfg, dir / "a");
  cfg.exec = {5, 1};
  run_pipeline(corpora, cfg, dir / "b");
  for (const char* f : {"summary.json", "round_1/pseudo_report.json", "round_2/eval.json",
                        "round_2/loss_trace.csv", "round_2/model/model_weights.tensor"}) {
    EXPECT_EQ(read_file(dir / "a" / f), read_file(dir / "b" / f)) << f;
  }
  const auto pseudo = load_manifest(dir / "a" / "round_1" / "pseudo" / "manifest.json");
  EXPECT_EQ(pseudo.entries.size(), corpora.unlabeled.size());
}

TEST(Pipeline, TemperatureRoundRecordsT) {
  const auto corpora = small_corpora();
  auto cfg = small_config(LabelMethod::kSt);
  cfg.schedule.rounds.resize(2);
  cfg.schedule.rounds[1].use_ts = true;
  const auto r = run_pipeline(corpora, cfg);
  ASSERT_TRUE(r.rounds[1].temperature.has_value());
  EXPECT_GT(*r.rounds[1].temperature, 0.0);
}

}  // namespace
}  // namespace dars
