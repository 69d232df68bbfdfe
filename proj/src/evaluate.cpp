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
#include <limits>
#include <map>

#include "dars/errors.hpp"
#include "dars/selftrain.hpp"

namespace dars {
namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

double mean_over(const std::vector<double>& iou, const std::vector<bool>& present,
                 std::span<const int> classes) {
  double sum = 0.0;
  std::size_t n = 0;
  for (int j : classes) {
    const auto u = static_cast<std::size_t>(j);
    if (u >= iou.size() || !present[u]) continue;
    sum += iou[u];
    ++n;
  }
  return n ? sum / static_cast<double>(n) : kNaN;
}

// Adds every 4-connected truth component of one image to the buckets.
void bucket_components(const LabelMap& pred, const LabelMap& truth,
                       std::vector<SizeBucket>& buckets) {
  const std::size_t h = truth.height();
  const std::size_t w = truth.width();
  const auto t = truth.values();
  const auto p = pred.values();
  std::vector<bool> seen(h * w, false);
  std::vector<std::size_t> stack;
  for (std::size_t start = 0; start < h * w; ++start) {
    if (seen[start] || t[start] == kIgnore) continue;
    const std::uint8_t cls = t[start];
    std::uint64_t area = 0;
    std::uint64_t correct = 0;
    stack.assign(1, start);
    seen[start] = true;
    while (!stack.empty()) {
      const std::size_t i = stack.back();
      stack.pop_back();
      ++area;
      if (p[i] == cls) ++correct;
      const std::size_t y = i / w;
      const std::size_t x = i % w;
      auto visit = [&](std::size_t j) {
        if (!seen[j] && t[j] == cls) {
          seen[j] = true;
          stack.push_back(j);
        }
      };
      if (x > 0) visit(i - 1);
      if (x + 1 < w) visit(i + 1);
      if (y > 0) visit(i - w);
      if (y + 1 < h) visit(i + w);
    }
    auto it = std::find_if(buckets.begin(), buckets.end(), [&](const auto& b) {
      return area >= b.min_area && (b.max_area == 0 || area < b.max_area);
    });
    if (it == buckets.end()) continue;
    ++it->components;
    it->pixels += area;
    it->correct += correct;
  }
}

}  // namespace

EvalReport evaluate(std::span<const LabelMap> pred,
                    std::span<const LabelMap> truth, const EvalOptions& opts) {
  if (pred.size() != truth.size()) {
    throw ShapeError("prediction and truth sets differ in size");
  }
  if (truth.empty()) throw ShapeError("nothing to evaluate");
  const int c = truth.front().num_classes();
  const auto uc = static_cast<std::size_t>(c);
  for (std::size_t e = 1; e < opts.size_edges.size(); ++e) {
    if (opts.size_edges[e] <= opts.size_edges[e - 1]) {
      throw ConfigError("size bucket edges must be strictly ascending");
    }
  }

  EvalReport r;
  r.num_classes = c;
  r.confusion.assign(uc * uc, 0);
  r.missed.assign(uc, 0);
  for (std::size_t e = 0; e < opts.size_edges.size(); ++e) {
    SizeBucket b;
    b.min_area = opts.size_edges[e];
    b.max_area = e + 1 < opts.size_edges.size() ? opts.size_edges[e + 1] : 0;
    r.accuracy_by_size.push_back(b);
  }

  for (std::size_t k = 0; k < truth.size(); ++k) {
    const auto& tm = truth[k];
    const auto& pm = pred[k];
    if (tm.height() != pm.height() || tm.width() != pm.width() ||
        tm.num_classes() != c || pm.num_classes() != c) {
      throw ShapeError("prediction/truth shape mismatch at image " +
                       std::to_string(k));
    }
    const auto t = tm.values();
    const auto p = pm.values();
    for (std::size_t i = 0; i < t.size(); ++i) {
      if (t[i] == kIgnore) continue;
      if (p[i] == kIgnore) {
        ++r.missed[t[i]];
      } else {
        ++r.confusion[t[i] * uc + p[i]];
      }
    }
    bucket_components(pm, tm, r.accuracy_by_size);
  }
  for (auto& b : r.accuracy_by_size) {
    b.accuracy = b.pixels ? static_cast<double>(b.correct) /
                                static_cast<double>(b.pixels)
                          : kNaN;
  }

  r.per_class_iou.assign(uc, kNaN);
  r.present.assign(uc, false);
  std::uint64_t correct = 0;
  std::uint64_t counted = 0;
  double iou_sum = 0.0;
  std::size_t n_present = 0;
  for (std::size_t j = 0; j < uc; ++j) {
    std::uint64_t row = r.missed[j];
    std::uint64_t col = 0;
    for (std::size_t q = 0; q < uc; ++q) {
      row += r.confusion[j * uc + q];
      col += r.confusion[q * uc + j];
    }
    const std::uint64_t tp = r.confusion[j * uc + j];
    const std::uint64_t denom = row + col - tp;  // TP + FN + FP
    correct += tp;
    counted += row;
    r.present[j] = row > 0;
    if (denom > 0) {
      r.per_class_iou[j] = static_cast<double>(tp) / static_cast<double>(denom);
    }
    if (r.present[j]) {
      iou_sum += r.per_class_iou[j];
      ++n_present;
    }
  }
  r.miou = n_present ? iou_sum / static_cast<double>(n_present) : kNaN;
  r.pixel_accuracy =
      counted ? static_cast<double>(correct) / static_cast<double>(counted) : kNaN;
  r.tail_miou = mean_over(r.per_class_iou, r.present, opts.tail_classes);
  for (const auto& g : opts.groups) {
    r.group_miou.push_back(mean_over(r.per_class_iou, r.present, g));
  }
  return r;
}

EvalReport evaluate(const DatasetManifest& pred, const DatasetManifest& truth,
                    const EvalOptions& opts) {
  if (pred.num_classes != truth.num_classes) {
    throw ShapeError("prediction and truth manifests differ in class count");
  }
  std::map<std::string, const ManifestEntry*> by_id;
  for (const auto& e : pred.entries) by_id[e.image_id] = &e;
  std::vector<LabelMap> p, t;
  for (const auto& e : truth.entries) {
    if (!e.label_path) {
      throw ManifestError("truth entry '" + e.image_id + "' has no label_path");
    }
    const auto it = by_id.find(e.image_id);
    if (it == by_id.end()) {
      throw ManifestError("no prediction for '" + e.image_id + "'");
    }
    const ManifestEntry& pe = *it->second;
    if (pe.label_path) {
      p.push_back(load_label_map(*pe.label_path, pred.num_classes));
    } else if (pe.prob_path) {
      p.push_back(argmax_map(load_probabilities(*pe.prob_path)));
    } else {
      throw ManifestError("prediction entry '" + e.image_id +
                          "' has neither label_path nor prob_path");
    }
    t.push_back(load_label_map(*e.label_path, truth.num_classes));
  }
  if (by_id.size() != truth.entries.size()) {
    throw ManifestError("prediction and truth manifests list different images");
  }
  return evaluate(p, t, opts);
}

}  // namespace dars
