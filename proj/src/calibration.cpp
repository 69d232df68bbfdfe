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

#include "dars/calibration.hpp"

#include <algorithm>
#include <cmath>

#include "dars/errors.hpp"

namespace dars {

Temperature::Temperature(double value) : value_(value) {
  if (!(value > 0.0) || !std::isfinite(value)) {
    throw ConfigError("temperature must be positive and finite");
  }
}

ProbabilityVolume apply_temperature(const LogitVolume& logits, Temperature t) {
  const std::size_t c = logits.num_classes();
  const std::size_t n = logits.pixel_count();
  const auto z = logits.data();
  const double inv_t = 1.0 / t.value();
  std::vector<float> out(c * n);
  std::vector<double> e(c);
  for (std::size_t i = 0; i < n; ++i) {
    double zmax = z[i];
    for (std::size_t j = 0; j < c; ++j) {
      const double v = z[j * n + i];
      if (!std::isfinite(v)) throw NumericError("non-finite logit");
      zmax = std::max(zmax, v);
    }
    double sum = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      e[j] = std::exp((z[j * n + i] - zmax) * inv_t);
      sum += e[j];
    }
    for (std::size_t j = 0; j < c; ++j) {
      out[j * n + i] = static_cast<float>(e[j] / sum);
    }
  }
  return ProbabilityVolume(c, logits.height(), logits.width(), std::move(out));
}

double temperature_nll(std::span<const LogitVolume> logits,
                       std::span<const LabelMap> labels, Temperature t) {
  if (logits.size() != labels.size()) {
    throw ShapeError("one label map per logit volume required");
  }
  const double inv_t = 1.0 / t.value();
  double total = 0.0;
  std::uint64_t count = 0;
  for (std::size_t k = 0; k < logits.size(); ++k) {
    const auto& lv = logits[k];
    const auto& lm = labels[k];
    if (lm.height() != lv.height() || lm.width() != lv.width() ||
        lm.num_classes() != static_cast<int>(lv.num_classes())) {
      throw ShapeError("logit/label shape mismatch");
    }
    const std::size_t c = lv.num_classes();
    const std::size_t n = lv.pixel_count();
    const auto z = lv.data();
    const auto y = lm.values();
    for (std::size_t i = 0; i < n; ++i) {
      if (y[i] == kIgnore) continue;
      double zmax = z[i];
      for (std::size_t j = 1; j < c; ++j) zmax = std::max<double>(zmax, z[j * n + i]);
      double sum = 0.0;
      for (std::size_t j = 0; j < c; ++j) {
        sum += std::exp((z[j * n + i] - zmax) * inv_t);
      }
      total += std::log(sum) - (z[y[i] * n + i] - zmax) * inv_t;
      ++count;
    }
  }
  if (count == 0) {
    throw EmptyDistributionError("no labeled pixels to fit a temperature");
  }
  return total / static_cast<double>(count);
}

TemperatureFit fit_temperature(std::span<const LogitVolume> logits,
                               std::span<const LabelMap> labels) {
  auto nll = [&](double log_t) {
    return temperature_nll(logits, labels, Temperature(std::exp(log_t)));
  };
  const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double lo = std::log(0.05);
  double hi = std::log(20.0);
  double x1 = hi - inv_phi * (hi - lo);
  double x2 = lo + inv_phi * (hi - lo);
  double f1 = nll(x1);
  double f2 = nll(x2);
  while (hi - lo > 1e-3) {
    if (f1 <= f2) {
      hi = x2;
      x2 = x1;
      f2 = f1;
      x1 = hi - inv_phi * (hi - lo);
      f1 = nll(x1);
    } else {
      lo = x1;
      x1 = x2;
      f1 = f2;
      x2 = lo + inv_phi * (hi - lo);
      f2 = nll(x2);
    }
  }
  TemperatureFit fit;
  fit.temperature = Temperature(std::exp(0.5 * (lo + hi)));
  fit.nll_before = nll(0.0);
  fit.nll_after = temperature_nll(logits, labels, fit.temperature);
  // NLL(fit) <= NLL(T=1) on the fitting set.
  if (fit.nll_after > fit.nll_before) {
    fit.temperature = Temperature(1.0);
    fit.nll_after = fit.nll_before;
  }
  return fit;
}

TemperedLogitSource::TemperedLogitSource(DatasetManifest manifest,
                                         Temperature t)
    : manifest_(std::move(manifest)), t_(t) {
  for (const auto& e : manifest_.entries) {
    if (!e.logit_path) {
      throw ManifestError("entry '" + e.image_id + "' has no logit_path");
    }
  }
}

std::shared_ptr<const ProbabilityVolume> TemperedLogitSource::load(
    std::size_t i) const {
  return std::make_shared<const ProbabilityVolume>(
      apply_temperature(load_logits(*manifest_.entries[i].logit_path), t_));
}

}  // namespace dars
