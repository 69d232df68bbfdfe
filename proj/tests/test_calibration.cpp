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

#include "dars/calibration.hpp"
#include "dars/errors.hpp"
#include "test_util.hpp"

namespace dars {
namespace {

TEST(ApplyTemperature, IdentityAtOne) {
  const LogitVolume z(3, 1, 2, {1.0f, -2.0f, 0.5f, 0.5f, 3.0f, 0.0f});
  const auto p = apply_temperature(z, Temperature(1.0));
  for (std::size_t px = 0; px < 2; ++px) {
    double s = 0.0;
    for (std::size_t c = 0; c < 3; ++c) s += std::exp(static_cast<double>(z.at(c, 0, px)));
    for (std::size_t c = 0; c < 3; ++c) {
      EXPECT_NEAR(p.at(c, 0, px), std::exp(static_cast<double>(z.at(c, 0, px))) / s, 1e-7);
    }
  }
}

TEST(ApplyTemperature, TwoOverTwo) {
  const auto p = apply_temperature(LogitVolume(2, 1, 1, {2.0f, 0.0f}), Temperature(2.0));
  EXPECT_NEAR(p.at(0, 0, 0), 0.731059, 1e-5);
  EXPECT_NEAR(p.at(1, 0, 0), 0.268941, 1e-5);
}

TEST(ApplyTemperature, HugeTemperatureIsUniform) {
  const auto p = apply_temperature(LogitVolume(4, 1, 1, {50.0f, -20.0f, 3.0f, 0.0f}),
                                   Temperature(1e6));
  for (std::size_t c = 0; c < 4; ++c) EXPECT_NEAR(p.at(c, 0, 0), 0.25, 1e-4);
}

TEST(ApplyTemperature, ExtremeLogitsStayFinite) {
  const auto p = apply_temperature(LogitVolume(2, 1, 1, {3e4f, -3e4f}), Temperature(0.05));
  EXPECT_EQ(p.at(0, 0, 0), 1.0f);
  EXPECT_EQ(p.at(1, 0, 0), 0.0f);
}

TEST(Temperature, RejectsNonPositive) {
  EXPECT_THROW(Temperature(0.0), ConfigError);
  EXPECT_THROW(Temperature(-1.0), ConfigError);
  EXPECT_THROW(Temperature(std::nan("")), ConfigError);
}

struct CalibratedSet {
  std::vector<LogitVolume> logits;
  std::vector<LabelMap> labels;
};

/// Labels drawn from softmax(z): z are calibrated log-posteriors.
CalibratedSet calibrated(std::uint64_t seed, double scale, std::size_t images) {
  Rng rng(seed);
  const std::size_t c = 4, h = 32, w = 32, n = h * w;
  CalibratedSet out;
  for (std::size_t i = 0; i < images; ++i) {
    std::vector<float> z(c * n);
    std::vector<std::uint8_t> y(n);
    for (std::size_t p = 0; p < n; ++p) {
      double e[4], s = 0.0;
      for (std::size_t k = 0; k < c; ++k) {
        const float v = static_cast<float>(2.0 * rng.normal());
        z[k * n + p] = v;
        s += (e[k] = std::exp(static_cast<double>(v)));
      }
      double u = rng.uniform() * s;
      std::size_t k = 0;
      while (k + 1 < c && u >= e[k]) u -= e[k++];
      y[p] = static_cast<std::uint8_t>(k);
      for (std::size_t q = 0; q < c; ++q) {
        z[q * n + p] = static_cast<float>(scale * z[q * n + p]);
      }
    }
    out.logits.emplace_back(c, h, w, std::move(z));
    out.labels.emplace_back(h, w, static_cast<int>(c), std::move(y));
  }
  return out;
}

/// Argmin of temperature_nll over a fine log grid.
double sweep_oracle(const CalibratedSet& s) {
  double best_t = 1.0, best = 1e300;
  for (int i = 0; i <= 600; ++i) {
    const double t = std::exp(std::log(0.5) + (std::log(4.0) - std::log(0.5)) * i / 600.0);
    const double nll = temperature_nll(s.logits, s.labels, Temperature(t));
    if (nll < best) {
      best = nll;
      best_t = t;
    }
  }
  return best_t;
}

TEST(FitTemperature, CalibratedLogits) {
  const auto s = calibrated(11, 1.0, 20);
  const auto fit = fit_temperature(s.logits, s.labels);
  EXPECT_GE(fit.temperature.value(), 0.95);
  EXPECT_LE(fit.temperature.value(), 1.05);
  EXPECT_NEAR(fit.temperature.value(), sweep_oracle(s), 0.01);
  EXPECT_LE(fit.nll_after, fit.nll_before);
}

TEST(FitTemperature, DoubledLogits) {
  const auto s = calibrated(12, 2.0, 20);
  const auto fit = fit_temperature(s.logits, s.labels);
  EXPECT_GE(fit.temperature.value(), 1.9);
  EXPECT_LE(fit.temperature.value(), 2.1);
  EXPECT_NEAR(fit.temperature.value(), sweep_oracle(s), 0.02);
  EXPECT_LT(fit.nll_after, fit.nll_before);
}

TEST(FitTemperature, NoLabeledPixels) {
  const std::vector<LogitVolume> z = {LogitVolume(2, 1, 1, {0.0f, 1.0f})};
  const std::vector<LabelMap> y = {LabelMap(1, 1, 2, {kIgnore})};
  EXPECT_THROW(fit_temperature(z, y), EmptyDistributionError);
}

}  // namespace
}  // namespace dars
