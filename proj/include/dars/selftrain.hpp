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

#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dars/calibration.hpp"
#include "dars/pseudo_label.hpp"
#include "dars/scenegen.hpp"
#include "dars/toymodel.hpp"

namespace dars {

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

struct EvalOptions {
  std::vector<int> tail_classes;
  /// Component-area bucket edges in pixels, ascending, starting at 0; the
  /// last bucket is open-ended.
  std::vector<std::uint64_t> size_edges = {0, 16, 64, 256, 1024, 4096};
  std::vector<std::vector<int>> groups;
};

struct SizeBucket {
  std::uint64_t min_area = 0;
  std::uint64_t max_area = 0;  ///< exclusive; 0 means unbounded
  std::uint64_t components = 0;
  std::uint64_t pixels = 0;
  std::uint64_t correct = 0;
  double accuracy = 0.0;  ///< NaN for empty buckets
};

struct EvalReport {
  int num_classes = 0;
  std::vector<std::uint64_t> confusion;  ///< C x C, (truth, prediction)
  std::vector<std::uint64_t> missed;     ///< truth pixels predicted IGNORE
  std::vector<double> per_class_iou;     ///< NaN where TP+FP+FN == 0
  std::vector<bool> present;             ///< class occurs in truth
  double miou = 0.0;
  double tail_miou = 0.0;
  double pixel_accuracy = 0.0;
  std::vector<SizeBucket> accuracy_by_size;
  std::vector<double> group_miou;  ///< one per configured group
};

/// Truth IGNORE pixels are excluded everywhere. mIoU averages classes
/// present in truth; size buckets group truth 4-connected components.
EvalReport evaluate(std::span<const LabelMap> pred,
                    std::span<const LabelMap> truth, const EvalOptions& opts);

/// Pairs entries by image_id. Prediction entries use label_path, or the
/// argmax of prob_path when no label_path is given.
EvalReport evaluate(const DatasetManifest& pred, const DatasetManifest& truth,
                    const EvalOptions& opts);

// ---------------------------------------------------------------------------
// Schedule
// ---------------------------------------------------------------------------

/// [(1 - beta_min) lo, (1 + beta_max) hi]. Throws ConfigError when
/// beta_min >= 1 or a beta is negative.
ScaleRange schedule_scale_range(ScaleRange base, double beta_min,
                                double beta_max);

struct RoundSpec {
  int k = 0;
  double alpha = 0.0;  ///< percent; unused in round 0
  double beta_min = 0.0;
  double beta_max = 0.0;
  int epochs = 1;
  LabelMethod method = LabelMethod::kDars;
  bool use_ts = false;
};

struct RoundSchedule {
  ScaleRange base{0.25, 1.0};
  std::vector<RoundSpec> rounds;

  /// k strictly increasing from 0, alpha non-decreasing over rounds >= 1,
  /// betas >= 0.
  void validate() const;

  /// Round 0 pre-training, then alpha 20 -> 50 with betas (0.2, 0.5) in
  /// round 2.
  static RoundSchedule two_round(LabelMethod method, int epochs0,
                                 int epochs_k);
};

// ---------------------------------------------------------------------------
// Corpora and pipeline
// ---------------------------------------------------------------------------

struct ImageSet {
  std::vector<std::string> ids;
  std::vector<FeatureVolume> images;
  std::vector<LabelMap> labels;  ///< empty when unknown

  std::size_t size() const { return ids.size(); }
};

struct Corpora {
  int num_classes = 0;
  ImageSet labeled;
  ImageSet unlabeled;  ///< labels, if present, are only used for reporting
  ImageSet test;

  static Corpora from_scenes(const SceneConfig& cfg, std::size_t n_labeled,
                             std::size_t n_unlabeled, std::size_t n_test,
                             const ExecOptions& exec = {});
  /// `unlabeled` entries may carry label_path (truth for reporting only).
  static Corpora from_manifests(const DatasetManifest& labeled,
                                const DatasetManifest& unlabeled,
                                const DatasetManifest& test);
};

/// Teacher predictions computed on demand, optionally through TS.
class ModelProbabilitySource final : public ProbabilitySource {
 public:
  ModelProbabilitySource(const LinearPixelModel& model, const ImageSet& images,
                         std::optional<Temperature> temperature = std::nullopt);

  std::size_t size() const override { return images_.size(); }
  int num_classes() const override { return model_.num_classes; }
  const std::string& image_id(std::size_t i) const override {
    return images_.ids[i];
  }
  std::shared_ptr<const ProbabilityVolume> load(std::size_t i) const override;

 private:
  const LinearPixelModel& model_;
  const ImageSet& images_;
  std::optional<Temperature> temperature_;
};

struct PipelineConfig {
  RoundSchedule schedule;
  TrainConfig train;  ///< epochs and augment are overridden per round
  std::uint64_t seed = 0;
  EvalOptions eval;
  ExecOptions exec;
};

/// Summary of one round (no per-pixel data).
struct RoundRecord {
  int k = 0;
  ScaleRange scale;
  std::optional<PseudoLabelResult> pseudo;  ///< labels cleared
  std::optional<double> temperature;
  std::optional<double> pseudo_accuracy;  ///< vs unlabeled truth
  std::vector<EpochLoss> trace;
  EvalReport eval;
};

struct RoundState {
  int k = -1;
  LinearPixelModel teacher;
  LinearPixelModel student;
  ScaleRange scale;
  std::vector<LabelMap> pseudo;
  RoundRecord record;
};

/// Round 0: supervised training from zeros. Round k >= 1: the previous
/// student labels the unlabeled set, the new student resumes from it.
RoundState run_round(const RoundState& prev, const RoundSpec& spec,
                     const Corpora& corpora, const PipelineConfig& cfg);

struct PipelineResult {
  std::vector<RoundRecord> rounds;
  LinearPixelModel final_model;
};

/// Runs every scheduled round; writes round_k/ artifacts under run_dir
/// when given.
PipelineResult run_pipeline(const Corpora& corpora, const PipelineConfig& cfg,
                            const std::optional<fs::path>& run_dir = {});

/// Argmax predictions of `model` for every image of `set`.
std::vector<LabelMap> predict_labels(const LinearPixelModel& model,
                                     const ImageSet& set,
                                     const ExecOptions& exec = {});

}  // namespace dars
