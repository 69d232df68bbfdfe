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
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dars/distribution.hpp"
#include "dars/parallel.hpp"
#include "dars/tensor_store.hpp"

namespace dars {

/// Random-access corpus of teacher predictions. load() must be
/// deterministic and safe to call concurrently; corpus-level operations
/// call it once per scan.
class ProbabilitySource {
 public:
  virtual ~ProbabilitySource() = default;
  virtual std::size_t size() const = 0;
  virtual int num_classes() const = 0;
  virtual const std::string& image_id(std::size_t i) const = 0;
  virtual std::shared_ptr<const ProbabilityVolume> load(std::size_t i) const = 0;
};

class InMemoryProbabilities final : public ProbabilitySource {
 public:
  InMemoryProbabilities(std::vector<std::string> ids,
                        std::vector<ProbabilityVolume> volumes);

  std::size_t size() const override { return ids_.size(); }
  int num_classes() const override { return num_classes_; }
  const std::string& image_id(std::size_t i) const override { return ids_[i]; }
  std::shared_ptr<const ProbabilityVolume> load(std::size_t i) const override {
    return volumes_[i];
  }

 private:
  std::vector<std::string> ids_;
  std::vector<std::shared_ptr<const ProbabilityVolume>> volumes_;
  int num_classes_ = 0;
};

/// Reads prob_path of every manifest entry on demand.
class ManifestProbabilities final : public ProbabilitySource {
 public:
  explicit ManifestProbabilities(DatasetManifest manifest);

  std::size_t size() const override { return manifest_.size(); }
  int num_classes() const override { return manifest_.num_classes; }
  const std::string& image_id(std::size_t i) const override {
    return manifest_.entries[i].image_id;
  }
  std::shared_ptr<const ProbabilityVolume> load(std::size_t i) const override;

 private:
  DatasetManifest manifest_;
};

/// Sentinel threshold above any probability: nothing passes it.
float threshold_sentinel();

/// Per-class thresholds and the counts they produce.
struct ThresholdPlan {
  std::vector<float> t;                   ///< confidence thresholds
  DesiredCounts n;                        ///< desired counts per class
  std::vector<std::uint64_t> n_tilde;     ///< pixels passing t_j
  std::vector<double> s;                  ///< min(1, n_j / n_tilde_j)
  std::vector<bool> deficient;            ///< n_tilde_j < n_j
  std::vector<std::uint64_t> candidates;  ///< argmax-j pixels in the corpus

  int num_classes() const { return static_cast<int>(t.size()); }
};

/// Exact t_j: the n_j-th largest confidence among argmax-j pixels.
ThresholdPlan compute_thresholds(const ProbabilitySource& probs,
                                 const DesiredCounts& n,
                                 const ExecOptions& exec = {});

/// Argmax label where confidence >= t_label, IGNORE elsewhere.
LabelMap apply_thresholds(const ProbabilityVolume& probs,
                          const ThresholdPlan& plan);

/// Deterministic per-pixel sampling key.
struct SamplingKey {
  std::uint64_t seed;
  std::string_view image_id;
  std::uint64_t pixel_index;
  std::uint8_t cls;

  std::uint64_t value() const;
};

/// Keeps exactly min(n_j, n_tilde_j) class-j candidates: those with the
/// smallest sampling keys. Throws ConsistencyError if the candidate counts
/// disagree with the plan.
std::vector<LabelMap> sample_exact(std::span<const std::string> image_ids,
                                   std::span<const LabelMap> candidates,
                                   const ThresholdPlan& plan,
                                   std::uint64_t seed,
                                   const ExecOptions& exec = {});

enum class LabelMethod { kDars, kSt, kCbst };
const char* method_name(LabelMethod method);
LabelMethod parse_method(std::string_view name);

struct PseudoLabelResult {
  LabelMethod method = LabelMethod::kDars;
  double alpha = 0.0;
  std::uint64_t seed = 0;
  std::vector<std::string> image_ids;
  std::vector<LabelMap> labels;
  ThresholdPlan plan;
  std::vector<std::uint64_t> realized_counts;
  std::vector<double> realized_freqs;
  /// KL(target || realized), eps-smoothed; NaN when no target was given.
  double kl_to_target = 0.0;
  double labeled_fraction = 0.0;
  std::uint64_t total_pixels = 0;
};

/// Distribution alignment followed by exact random sampling.
PseudoLabelResult dars_label(const ProbabilitySource& probs,
                             const ClassDistribution& target, double alpha,
                             std::uint64_t seed, const ExecOptions& exec = {});
PseudoLabelResult dars_label(const DatasetManifest& unlabeled,
                             const ClassDistribution& target, double alpha,
                             std::uint64_t seed, const ExecOptions& exec = {});

/// Single global confidence threshold keeping the top alpha% pixels.
PseudoLabelResult st_label(const ProbabilitySource& probs, double alpha,
                           const ClassDistribution* target = nullptr,
                           const ExecOptions& exec = {});

/// Per predicted class, the top alpha% most confident pixels.
PseudoLabelResult cbst_label(const ProbabilitySource& probs, double alpha,
                             const ClassDistribution* target = nullptr,
                             const ExecOptions& exec = {});

/// Dispatches on method; `target` is required for kDars.
PseudoLabelResult run_labeling(LabelMethod method,
                               const ProbabilitySource& probs, double alpha,
                               const ClassDistribution* target,
                               std::uint64_t seed, const ExecOptions& exec = {});

}  // namespace dars
