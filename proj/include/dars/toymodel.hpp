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
#include <vector>

#include "dars/parallel.hpp"
#include "dars/rng.hpp"
#include "dars/tensor_store.hpp"

namespace dars {

/// Per-pixel features: r, g, b, x/(W-1), y/(H-1), 1.
inline constexpr std::size_t kFeatureDim = 6;

/// Linear softmax classifier over per-pixel features.
struct LinearPixelModel {
  int num_classes = 0;
  std::size_t feature_dim = kFeatureDim;
  std::vector<float> weights;  ///< C x F, row-major
  std::vector<float> bias;     ///< C
  std::uint64_t seed = 0;
  std::uint64_t epochs_trained = 0;

  static LinearPixelModel zeros(int num_classes);
  /// Throws ValidationError on shape mismatch or non-finite parameters.
  void validate() const;
  std::size_t param_count() const { return weights.size() + bias.size(); }

  /// Flattened [weights..., bias...] in double precision.
  std::vector<double> params() const;
  void set_params(std::span<const double> params);

  bool operator==(const LinearPixelModel&) const = default;
};

struct ScaleRange {
  double lo = 1.0;
  double hi = 1.0;
  bool operator==(const ScaleRange&) const = default;
};

struct TrainConfig {
  double learning_rate = 5.0;
  int epochs = 20;
  std::size_t batch_size = 1;
  double l2 = 0.0;
  std::uint64_t seed = 0;
  /// Random-scaling augmentation range; none disables augmentation.
  std::optional<ScaleRange> augment;

  void validate() const;
};

/// 3 x H x W scene features -> F x H x W model features.
FeatureVolume extract_features(const FeatureVolume& image);

struct ForwardResult {
  LogitVolume logits;
  ProbabilityVolume probs;
};

ForwardResult forward(const LinearPixelModel& model,
                      const FeatureVolume& features);

/// Convenience: extract_features + forward.
ForwardResult predict_image(const LinearPixelModel& model,
                            const FeatureVolume& image);

/// One image of a loss term with its weight in the objective.
struct WeightedExample {
  const FeatureVolume* features;  ///< F x H x W
  const LabelMap* labels;
  double weight;
};

/// Sum over examples of weight * (mean cross-entropy over non-ignore
/// pixels), plus 0.5 * l2 * ||W||^2. Images with no valid pixel contribute
/// nothing. Writes d(loss)/d(params) into `grad` (same layout as params()).
/// `per_image_loss`, if non-empty, receives each example's unweighted mean
/// cross-entropy (NaN for images with no valid pixel).
double batch_loss_and_gradient(int num_classes, std::span<const double> params,
                               std::span<const WeightedExample> batch,
                               double l2, std::span<double> grad,
                               std::span<double> per_image_loss = {});

/// Scene-level training image: raw 3 x H x W features and labels (IGNORE
/// pixels are excluded from the loss).
struct TrainingImage {
  const FeatureVolume* image;
  const LabelMap* labels;
};

struct EpochLoss {
  int epoch = 0;               ///< 0 is the evaluation before any update
  double labeled_loss = 0.0;   ///< NaN if no labeled term
  double pseudo_loss = 0.0;    ///< NaN if no pseudo term
  double objective = 0.0;      ///< labeled + pseudo (present terms)
};

struct TrainResult {
  LinearPixelModel model;
  std::vector<EpochLoss> trace;
};

/// Mini-batch gradient descent on mean labeled cross-entropy + mean pseudo
/// cross-entropy (equal weights). Resumes from `init`. Deterministic given
/// (init, data, cfg). Throws EmptyDatasetError if no labeled image has a
/// valid pixel.
TrainResult train(const LinearPixelModel& init,
                  std::span<const TrainingImage> labeled,
                  std::span<const TrainingImage> pseudo,
                  const TrainConfig& cfg, const ExecOptions& exec = {});

/// Manifest form: entries need image_path and label_path.
TrainResult train(const LinearPixelModel& init, const DatasetManifest& labeled,
                  const DatasetManifest* pseudo, const TrainConfig& cfg,
                  const ExecOptions& exec = {});

/// Random scaling: draws s in [lo, hi], resizes features bilinearly and
/// labels by nearest neighbour to (round(sH), round(sW)), then crops or
/// pads (features 0, labels IGNORE) back to H x W at a random offset.
struct AugmentedImage {
  FeatureVolume image;
  LabelMap labels;
};
AugmentedImage augment_random_scale(const FeatureVolume& image,
                                    const LabelMap& labels, ScaleRange range,
                                    Rng& rng);
/// Deterministic variant for a fixed scale and offset.
AugmentedImage rescale_and_place(const FeatureVolume& image,
                                 const LabelMap& labels, double scale,
                                 long offset_y, long offset_x);

/// Writes logits/<id>.tensor and probs/<id>.tensor for every entry (which
/// needs image_path) and returns the manifest pointing at them; also saved
/// as predictions.json under out_dir.
DatasetManifest predict_corpus(const LinearPixelModel& model,
                               const DatasetManifest& images,
                               const fs::path& out_dir,
                               const ExecOptions& exec = {});

/// model.json + model_weights.tensor + model_bias.tensor in `dir`.
void save_model(const LinearPixelModel& model, const fs::path& dir);
LinearPixelModel load_model(const fs::path& dir);

}  // namespace dars
