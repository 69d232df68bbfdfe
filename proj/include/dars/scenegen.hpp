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

#include <array>
#include <cstdint>
#include <vector>

#include "dars/distribution.hpp"
#include "dars/parallel.hpp"
#include "dars/tensor_store.hpp"

namespace dars {

/// Generator knobs for one class.
struct ClassSpec {
  double occurrence = 0.0;  ///< probability an image contains the class
  double size_min = 0.0;    ///< rectangle area as a fraction of the image
  double size_max = 0.0;
  std::array<float, 3> color{};  ///< noiseless feature archetype
  int group = -1;  ///< frequency x size group (0..3), -1 if unassigned
};

struct SceneConfig {
  int num_classes = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  int background_class = 0;
  double noise_sigma = 0.0;
  std::uint64_t seed = 0;
  std::vector<ClassSpec> classes;

  /// Throws ConfigError.
  void validate() const;

  /// 20 classes at 128x128, four groups of five: frequent/large (0-4, class
  /// 0 is background), frequent/small (5-9), rare/large (10-14),
  /// rare/small (15-19).
  static SceneConfig default_preset(std::uint64_t seed = 1);

  /// Classes whose group is 1, 2 or 3.
  std::vector<int> tail_classes() const;
  /// Class indices per group 0..3.
  std::vector<std::vector<int>> groups() const;
};

struct Scene {
  FeatureVolume features;  ///< 3 x H x W in [0,1]
  LabelMap labels;         ///< ground truth, no IGNORE
};

/// Rectangle edge length (pixels) for an area fraction along a side of
/// `extent` pixels; rectangles keep the image aspect ratio.
std::size_t rect_extent(double area_fraction, std::size_t extent);

/// Pure function of (cfg, index).
Scene generate_scene(const SceneConfig& cfg, std::uint64_t index);

/// Scenes [first, first + count) in index order.
std::vector<Scene> generate_scenes(const SceneConfig& cfg, std::uint64_t first,
                                   std::size_t count,
                                   const ExecOptions& exec = {});

struct GeneratedDataset {
  DatasetManifest labeled;          ///< image + label
  DatasetManifest unlabeled;        ///< image only
  DatasetManifest unlabeled_truth;  ///< image + label (evaluation oracle)
  DatasetManifest test;             ///< image + label
  ClassDistribution labeled_distribution;
};

/// Writes images/ and labels/ tensors plus labeled.json, unlabeled.json,
/// unlabeled_truth.json and test.json under `out_dir`. Labeled scenes use
/// indices [0, n_l), unlabeled [n_l, n_l + n_u), test the rest.
GeneratedDataset generate_dataset(const SceneConfig& cfg,
                                  std::size_t n_labeled,
                                  std::size_t n_unlabeled, std::size_t n_test,
                                  const fs::path& out_dir,
                                  const ExecOptions& exec = {});

}  // namespace dars
