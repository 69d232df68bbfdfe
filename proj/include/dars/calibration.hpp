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

#include <memory>
#include <span>
#include <string>
#include <vector>

#include "dars/pseudo_label.hpp"
#include "dars/tensor_store.hpp"

namespace dars {

/// Positive, finite softmax temperature.
class Temperature {
 public:
  explicit Temperature(double value);
  double value() const { return value_; }

 private:
  double value_;
};

/// softmax(z / T) per pixel with max subtraction; throws NumericError on
/// non-finite input.
ProbabilityVolume apply_temperature(const LogitVolume& logits, Temperature t);

/// Mean cross-entropy of softmax(z / T) over non-ignore pixels.
double temperature_nll(std::span<const LogitVolume> logits,
                       std::span<const LabelMap> labels, Temperature t);

struct TemperatureFit {
  Temperature temperature{1.0};
  double nll_before = 0.0;  ///< at T = 1
  double nll_after = 0.0;
};

/// Golden-section search for the NLL-minimizing T over log T in
/// [ln 0.05, ln 20], to 1e-3 in log space.
TemperatureFit fit_temperature(std::span<const LogitVolume> logits,
                               std::span<const LabelMap> labels);

/// Logits read from a manifest's logit_path, tempered on load.
class TemperedLogitSource final : public ProbabilitySource {
 public:
  TemperedLogitSource(DatasetManifest manifest, Temperature t);

  std::size_t size() const override { return manifest_.size(); }
  int num_classes() const override { return manifest_.num_classes; }
  const std::string& image_id(std::size_t i) const override {
    return manifest_.entries[i].image_id;
  }
  std::shared_ptr<const ProbabilityVolume> load(std::size_t i) const override;

 private:
  DatasetManifest manifest_;
  Temperature t_;
};

}  // namespace dars
