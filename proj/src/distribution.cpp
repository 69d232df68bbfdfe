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

#include "dars/distribution.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "dars/errors.hpp"

namespace dars {

ClassDistribution ClassDistribution::from_counts(
    std::vector<std::uint64_t> counts) {
  ClassDistribution d;
  d.total = std::accumulate(counts.begin(), counts.end(), std::uint64_t{0});
  if (d.total == 0) {
    throw EmptyDistributionError("distribution has no counted pixels");
  }
  d.freqs.resize(counts.size());
  for (std::size_t j = 0; j < counts.size(); ++j) {
    d.freqs[j] = static_cast<double>(counts[j]) / static_cast<double>(d.total);
  }
  d.counts = std::move(counts);
  return d;
}

ClassDistribution ClassDistribution::from_freqs(
    std::span<const double> weights) {
  double sum = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0) || !std::isfinite(w)) {
      throw ValidationError("distribution weights must be finite and >= 0");
    }
    sum += w;
  }
  if (sum <= 0.0) throw EmptyDistributionError("distribution weights sum to 0");
  std::vector<std::uint64_t> counts(weights.size());
  for (std::size_t j = 0; j < weights.size(); ++j) {
    counts[j] = static_cast<std::uint64_t>(std::llround(weights[j] / sum * 1e9));
  }
  return from_counts(std::move(counts));
}

void accumulate_label_counts(const LabelMap& labels,
                             std::span<std::uint64_t> counts) {
  if (labels.num_classes() != static_cast<int>(counts.size())) {
    throw ShapeError("label map C=" + std::to_string(labels.num_classes()) +
                     " does not match " + std::to_string(counts.size()));
  }
  for (auto v : labels.values()) {
    if (v != kIgnore) ++counts[v];
  }
}

ClassDistribution label_frequencies(std::span<const LabelMap> labels,
                                    int num_classes) {
  std::vector<std::uint64_t> counts(static_cast<std::size_t>(num_classes), 0);
  for (const auto& m : labels) accumulate_label_counts(m, counts);
  return ClassDistribution::from_counts(std::move(counts));
}

ClassDistribution pred_frequencies(std::span<const ProbabilityVolume> probs) {
  if (probs.empty()) {
    throw EmptyDistributionError("no prediction volumes");
  }
  const std::size_t c = probs.front().num_classes();
  std::vector<std::uint64_t> counts(c, 0);
  for (const auto& p : probs) {
    if (p.num_classes() != c) throw ShapeError("inconsistent class counts");
    for (std::size_t i = 0; i < p.pixel_count(); ++i) {
      ++counts[argmax_pixel(p, i).label];
    }
  }
  return ClassDistribution::from_counts(std::move(counts));
}

double kl_divergence(std::span<const double> p, std::span<const double> q,
                     bool smooth) {
  if (p.size() != q.size()) {
    throw ShapeError("KL divergence over different class counts");
  }
  const double c = static_cast<double>(q.size());
  double kl = 0.0;
  for (std::size_t j = 0; j < p.size(); ++j) {
    if (p[j] <= 0.0) continue;
    const double qj =
        smooth ? (q[j] + kKlSmoothing) / (1.0 + c * kKlSmoothing) : q[j];
    if (qj <= 0.0) return std::numeric_limits<double>::infinity();
    kl += p[j] * std::log(p[j] / qj);
  }
  // Rounding can leave a tiny negative residue for equal inputs.
  return std::max(kl, 0.0);
}

double kl_divergence(const ClassDistribution& p, const ClassDistribution& q,
                     bool smooth) {
  return kl_divergence(p.freqs, q.freqs, smooth);
}

std::uint64_t labeling_budget(double alpha, std::uint64_t total_pixels) {
  const long double exact =
      static_cast<long double>(alpha) * total_pixels / 100.0L;
  return static_cast<std::uint64_t>(std::llround(exact));
}

std::uint64_t DesiredCounts::budget() const {
  return std::accumulate(n.begin(), n.end(), std::uint64_t{0});
}

DesiredCounts desired_counts(const ClassDistribution& target, double alpha,
                             std::uint64_t total_pixels) {
  if (!(alpha > 0.0 && alpha <= 100.0)) {
    throw ConfigError("labeling ratio must be in (0, 100], got " +
                      std::to_string(alpha));
  }
  if (total_pixels == 0) throw ConfigError("total_pixels must be positive");
  if (target.total == 0) throw EmptyDistributionError("empty target");

  const std::size_t c = target.counts.size();
  const std::uint64_t budget = labeling_budget(alpha, total_pixels);
  // Real targets alpha/100 * total * counts_j / target_total, evaluated in
  // extended precision from the integer counts.
  const long double scale = static_cast<long double>(alpha) * total_pixels /
                            (100.0L * static_cast<long double>(target.total));
  DesiredCounts out{std::vector<std::uint64_t>(c, 0), alpha, total_pixels};
  std::vector<long double> remainder(c, 0.0L);
  std::uint64_t assigned = 0;
  for (std::size_t j = 0; j < c; ++j) {
    const long double raw = scale * target.counts[j];
    const long double fl = std::floor(raw);
    out.n[j] = static_cast<std::uint64_t>(fl);
    remainder[j] = raw - fl;
    assigned += out.n[j];
  }
  std::vector<std::size_t> order(c);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) {
    return remainder[a] > remainder[b];
  });
  for (std::size_t i = 0; assigned < budget && i < c; ++i) {
    if (target.counts[order[i]] == 0) continue;
    ++out.n[order[i]];
    ++assigned;
  }
  return out;
}

}  // namespace dars
