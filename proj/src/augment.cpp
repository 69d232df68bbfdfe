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

#include <algorithm>
#include <cmath>

#include "dars/errors.hpp"
#include "dars/toymodel.hpp"

namespace dars {
namespace {

// Half-pixel-centre source coordinate for output index `dst` when an axis
// of `src_n` pixels is resized to `dst_n`.
double source_coord(std::size_t dst, std::size_t src_n, std::size_t dst_n) {
  return (static_cast<double>(dst) + 0.5) * static_cast<double>(src_n) /
             static_cast<double>(dst_n) - 0.5;
}

}  // namespace

AugmentedImage rescale_and_place(const FeatureVolume& image,
                                 const LabelMap& labels, double scale,
                                 long offset_y, long offset_x) {
  const std::size_t h = image.height();
  const std::size_t w = image.width();
  const std::size_t ch = image.channels();
  if (labels.height() != h || labels.width() != w) {
    throw ShapeError("image/label size mismatch");
  }
  const long sh = std::lround(scale * static_cast<double>(h));
  const long sw = std::lround(scale * static_cast<double>(w));
  if (sh < 1 || sw < 1) {
    throw ConfigError("scale " + std::to_string(scale) +
                      " gives an empty image");
  }
  const auto ush = static_cast<std::size_t>(sh);
  const auto usw = static_cast<std::size_t>(sw);

  // Precomputed bilinear taps and nearest indices per output row/column of
  // the resized (sh x sw) image.
  struct Tap {
    std::size_t i0, i1, nearest;
    double frac;
  };
  auto taps = [](std::size_t src_n, std::size_t dst_n) {
    std::vector<Tap> t(dst_n);
    for (std::size_t d = 0; d < dst_n; ++d) {
      const double s = std::clamp(source_coord(d, src_n, dst_n), 0.0,
                                  static_cast<double>(src_n - 1));
      const auto i0 = static_cast<std::size_t>(std::floor(s));
      const std::size_t i1 = std::min(i0 + 1, src_n - 1);
      const auto nearest = std::min(
          static_cast<std::size_t>(std::floor((static_cast<double>(d) + 0.5) *
                                              static_cast<double>(src_n) /
                                              static_cast<double>(dst_n))),
          src_n - 1);
      t[d] = {i0, i1, nearest, s - static_cast<double>(i0)};
    }
    return t;
  };
  const auto ty = taps(h, ush);
  const auto tx = taps(w, usw);

  std::vector<float> out(ch * h * w, 0.0f);
  std::vector<std::uint8_t> out_labels(h * w, kIgnore);
  const auto src = image.data();
  const auto src_labels = labels.values();
  for (std::size_t y = 0; y < h; ++y) {
    const long ry = static_cast<long>(y) + offset_y;  // row in resized image
    if (ry < 0 || ry >= sh) continue;
    const Tap& a = ty[static_cast<std::size_t>(ry)];
    for (std::size_t x = 0; x < w; ++x) {
      const long rx = static_cast<long>(x) + offset_x;
      if (rx < 0 || rx >= sw) continue;
      const Tap& b = tx[static_cast<std::size_t>(rx)];
      for (std::size_t c = 0; c < ch; ++c) {
        const float* p = src.data() + c * h * w;
        const double top = p[a.i0 * w + b.i0] * (1.0 - b.frac) +
                           p[a.i0 * w + b.i1] * b.frac;
        const double bot = p[a.i1 * w + b.i0] * (1.0 - b.frac) +
                           p[a.i1 * w + b.i1] * b.frac;
        out[c * h * w + y * w + x] = static_cast<float>(
            std::clamp(top * (1.0 - a.frac) + bot * a.frac, 0.0, 1.0));
      }
      out_labels[y * w + x] = src_labels[a.nearest * w + b.nearest];
    }
  }
  return {FeatureVolume(ch, h, w, std::move(out)),
          LabelMap(h, w, labels.num_classes(), std::move(out_labels))};
}

AugmentedImage augment_random_scale(const FeatureVolume& image,
                                    const LabelMap& labels, ScaleRange range,
                                    Rng& rng) {
  if (!(range.lo > 0.0 && range.lo <= range.hi)) {
    throw ConfigError("scale range must satisfy 0 < lo <= hi");
  }
  const double s = range.lo == range.hi ? range.lo : rng.uniform(range.lo, range.hi);
  const long h = static_cast<long>(image.height());
  const long w = static_cast<long>(image.width());
  const long sh = std::lround(s * static_cast<double>(h));
  const long sw = std::lround(s * static_cast<double>(w));
  if (sh < 1 || sw < 1) {
    throw ConfigError("scale " + std::to_string(s) + " gives an empty image");
  }
  // Crop (sh > h): offset into the resized image in [0, sh - h].
  // Pad (sh < h): content placed at [pad, pad + sh), offset = -pad.
  auto offset = [&rng](long resized, long canvas) -> long {
    const long slack = resized - canvas;
    if (slack == 0) return 0;
    const auto draw = static_cast<long>(
        rng.below(static_cast<std::uint64_t>(std::labs(slack)) + 1));
    return slack > 0 ? draw : -draw;
  };
  const long oy = offset(sh, h);
  const long ox = offset(sw, w);
  return rescale_and_place(image, labels, s, oy, ox);
}

}  // namespace dars
