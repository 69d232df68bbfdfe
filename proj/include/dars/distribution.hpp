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
#include <span>
#include <vector>

#include "dars/tensor_store.hpp"

namespace dars {

/// Per-class pixel counts and their normalized frequencies.
struct ClassDistribution {
  std::vector<std::uint64_t> counts;
  std::vector<double> freqs;
  std::uint64_t total = 0;

  /// Throws EmptyDistributionError when the counts sum to zero.
  static ClassDistribution from_counts(std::vector<std::uint64_t> counts);
  /// Builds a distribution from relative weights (need not be normalized).
  /// Counts become round(w / sum(w) * 1e9).
  static ClassDistribution from_freqs(std::span<const double> weights);

  int num_classes() const { return static_cast<int>(counts.size()); }
};

/// Adds the non-ignore pixels of `labels` into `counts` (size C).
void accumulate_label_counts(const LabelMap& labels,
                             std::span<std::uint64_t> counts);

ClassDistribution label_frequencies(std::span<const LabelMap> labels,
                                    int num_classes);

/// Distribution of argmax predictions (ties toward the lower index).
ClassDistribution pred_frequencies(std::span<const ProbabilityVolume> probs);

inline constexpr double kKlSmoothing = 1e-12;

/// KL(p || q) in nats. Terms with p_j == 0 vanish. Without smoothing a
/// class with p_j > 0 and q_j == 0 gives +inf; with smoothing q is
/// replaced by (q + eps) / (1 + C eps).
double kl_divergence(const ClassDistribution& p, const ClassDistribution& q,
                     bool smooth = false);
double kl_divergence(std::span<const double> p, std::span<const double> q,
                     bool smooth = false);

/// Desired pseudo-label counts n_j for a labeling ratio `alpha` (percent).
struct DesiredCounts {
  std::vector<std::uint64_t> n;
  double alpha = 0.0;
  std::uint64_t total_pixels = 0;

  std::uint64_t budget() const;
  int num_classes() const { return static_cast<int>(n.size()); }
};

/// round(alpha/100 * total), half away from zero.
std::uint64_t labeling_budget(double alpha, std::uint64_t total_pixels);

/// Splits the budget across classes in proportion to `target`, using
/// largest-remainder rounding (remainder ties toward the lower index).
DesiredCounts desired_counts(const ClassDistribution& target, double alpha,
                             std::uint64_t total_pixels);

}  // namespace dars
