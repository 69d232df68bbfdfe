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

#include "dars/scenegen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <string>

#include "dars/errors.hpp"
#include "dars/rng.hpp"

namespace dars {

void SceneConfig::validate() const {
  if (num_classes < 1 || num_classes > 255) {
    throw ConfigError("num_classes must be in [1, 255]");
  }
  if (classes.size() != static_cast<std::size_t>(num_classes)) {
    throw ConfigError("one class spec per class required");
  }
  if (height == 0 || width == 0) throw ConfigError("empty image size");
  if (background_class < 0 || background_class >= num_classes) {
    throw ConfigError("background_class out of range");
  }
  if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma)) {
    throw ConfigError("noise_sigma must be >= 0");
  }
  for (int j = 0; j < num_classes; ++j) {
    const auto& c = classes[static_cast<std::size_t>(j)];
    for (float v : c.color) {
      if (!(v >= 0.0f && v <= 1.0f)) throw ConfigError("color outside [0,1]");
    }
    if (j == background_class) continue;
    if (!(c.occurrence >= 0.0 && c.occurrence <= 1.0)) {
      throw ConfigError("occurrence outside [0,1] for class " +
                        std::to_string(j));
    }
    if (!(c.size_min > 0.0 && c.size_min <= c.size_max && c.size_max <= 1.0)) {
      throw ConfigError("size range must satisfy 0 < min <= max <= 1 for "
                        "class " + std::to_string(j));
    }
  }
}

SceneConfig SceneConfig::default_preset(std::uint64_t seed) {
  SceneConfig cfg;
  cfg.num_classes = 20;
  cfg.height = 128;
  cfg.width = 128;
  cfg.background_class = 0;
  cfg.noise_sigma = 0.1;
  cfg.seed = seed;
  // Archetypes on the {0.1, 0.5, 0.9}^3 lattice. The background takes the
  // dark corner and its three face neighbours stay unused, so the head class
  // is the most separable one.
  const float lv[3] = {0.1f, 0.5f, 0.9f};
  std::vector<std::array<float, 3>> lattice;
  for (int r = 0; r < 3; ++r)
    for (int g = 0; g < 3; ++g)
      for (int b = 0; b < 3; ++b)
        if ((r > 0) + (g > 0) + (b > 0) >= 2) lattice.push_back({lv[r], lv[g], lv[b]});
  struct GroupSpec { double occurrence, size_min, size_max; };
  const GroupSpec groups[4] = {
      {0.80, 0.10, 0.30},   // frequent, large
      {0.70, 0.01, 0.04},   // frequent, small
      {0.20, 0.10, 0.25},   // rare, large
      {0.30, 0.02, 0.05},   // rare, small
  };
  cfg.classes.resize(20);
  for (int j = 0; j < 20; ++j) {
    auto& c = cfg.classes[static_cast<std::size_t>(j)];
    c.group = j / 5;
    const auto& g = groups[c.group];
    c.occurrence = g.occurrence;
    c.size_min = g.size_min;
    c.size_max = g.size_max;
    c.color = j == 0 ? std::array<float, 3>{0.1f, 0.1f, 0.1f}
                     : lattice[static_cast<std::size_t>(j - 1) * lattice.size() / 19];
  }
  return cfg;
}

std::vector<int> SceneConfig::tail_classes() const {
  std::vector<int> out;
  for (int j = 0; j < num_classes; ++j) {
    const int g = classes[static_cast<std::size_t>(j)].group;
    if (g >= 1 && g <= 3) out.push_back(j);
  }
  return out;
}

std::vector<std::vector<int>> SceneConfig::groups() const {
  std::vector<std::vector<int>> out(4);
  for (int j = 0; j < num_classes; ++j) {
    const int g = classes[static_cast<std::size_t>(j)].group;
    if (g >= 0 && g < 4) out[static_cast<std::size_t>(g)].push_back(j);
  }
  return out;
}

std::size_t rect_extent(double area_fraction, std::size_t extent) {
  const auto e = static_cast<std::size_t>(
      std::llround(std::sqrt(area_fraction) * static_cast<double>(extent)));
  return std::clamp<std::size_t>(e, 1, extent);
}

Scene generate_scene(const SceneConfig& cfg, std::uint64_t index) {
  cfg.validate();
  const std::size_t h = cfg.height;
  const std::size_t w = cfg.width;
  Rng rng(mix(cfg.seed, index));
  std::vector<std::uint8_t> labels(h * w,
                                   static_cast<std::uint8_t>(cfg.background_class));
  for (int j = 0; j < cfg.num_classes; ++j) {
    if (j == cfg.background_class) continue;
    const auto& spec = cfg.classes[static_cast<std::size_t>(j)];
    if (rng.uniform() >= spec.occurrence) continue;
    const double area = rng.uniform(spec.size_min, spec.size_max);
    const std::size_t rh = rect_extent(area, h);
    const std::size_t rw = rect_extent(area, w);
    const std::size_t top = rng.below(h - rh + 1);
    const std::size_t left = rng.below(w - rw + 1);
    for (std::size_t y = top; y < top + rh; ++y) {
      std::fill_n(labels.begin() + static_cast<std::ptrdiff_t>(y * w + left),
                  rw, static_cast<std::uint8_t>(j));
    }
  }
  std::vector<float> features(3 * h * w);
  for (std::size_t ch = 0; ch < 3; ++ch) {
    for (std::size_t i = 0; i < h * w; ++i) {
      const double base = cfg.classes[labels[i]].color[ch];
      const double noise = cfg.noise_sigma > 0.0 ? cfg.noise_sigma * rng.normal() : 0.0;
      features[ch * h * w + i] =
          static_cast<float>(std::clamp(base + noise, 0.0, 1.0));
    }
  }
  return Scene{FeatureVolume(3, h, w, std::move(features)),
               LabelMap(h, w, cfg.num_classes, std::move(labels))};
}

std::vector<Scene> generate_scenes(const SceneConfig& cfg, std::uint64_t first,
                                   std::size_t count,
                                   const ExecOptions& exec) {
  cfg.validate();
  std::vector<Scene> out(count);
  parallel_for(count, exec.threads,
               [&](std::size_t i) { out[i] = generate_scene(cfg, first + i); });
  return out;
}

namespace {

std::string make_id(char prefix, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%c%06zu", prefix, i);
  return buf;
}

}  // namespace

GeneratedDataset generate_dataset(const SceneConfig& cfg,
                                  std::size_t n_labeled,
                                  std::size_t n_unlabeled, std::size_t n_test,
                                  const fs::path& out_dir,
                                  const ExecOptions& exec) {
  cfg.validate();
  if (n_labeled == 0 || n_unlabeled == 0 || n_test == 0) {
    throw ConfigError("dataset split sizes must be positive");
  }
  std::error_code ec;
  fs::create_directories(out_dir / "images", ec);
  fs::create_directories(out_dir / "labels", ec);
  if (ec) throw IoError("cannot create " + out_dir.string());

  struct Item {
    char prefix;
    std::size_t local;
    std::uint64_t index;
  };
  std::vector<Item> items;
  for (std::size_t i = 0; i < n_labeled; ++i) items.push_back({'l', i, i});
  for (std::size_t i = 0; i < n_unlabeled; ++i) {
    items.push_back({'u', i, n_labeled + i});
  }
  for (std::size_t i = 0; i < n_test; ++i) {
    items.push_back({'t', i, n_labeled + n_unlabeled + i});
  }
  std::vector<ManifestEntry> entries(items.size());
  std::vector<LabelMap> labeled_maps(n_labeled);
  parallel_for(items.size(), exec.threads, [&](std::size_t k) {
    const Item& it = items[k];
    const Scene scene = generate_scene(cfg, it.index);
    ManifestEntry e;
    e.image_id = make_id(it.prefix, it.local);
    e.image_path = out_dir / "images" / (e.image_id + ".tensor");
    e.label_path = out_dir / "labels" / (e.image_id + ".tensor");
    write_tensor(scene.features.to_tensor(), *e.image_path);
    write_tensor(scene.labels.to_tensor(), *e.label_path);
    if (it.prefix == 'l') labeled_maps[it.local] = scene.labels;
    entries[k] = std::move(e);
  });

  GeneratedDataset ds;
  for (auto* m : {&ds.labeled, &ds.unlabeled, &ds.unlabeled_truth, &ds.test}) {
    m->num_classes = cfg.num_classes;
  }
  for (std::size_t k = 0; k < items.size(); ++k) {
    switch (items[k].prefix) {
      case 'l': ds.labeled.entries.push_back(entries[k]); break;
      case 'u': {
        ds.unlabeled_truth.entries.push_back(entries[k]);
        ManifestEntry bare = entries[k];
        bare.label_path.reset();
        ds.unlabeled.entries.push_back(std::move(bare));
        break;
      }
      default: ds.test.entries.push_back(entries[k]); break;
    }
  }
  save_manifest(ds.labeled, out_dir / "labeled.json");
  save_manifest(ds.unlabeled, out_dir / "unlabeled.json");
  save_manifest(ds.unlabeled_truth, out_dir / "unlabeled_truth.json");
  save_manifest(ds.test, out_dir / "test.json");
  ds.labeled_distribution = label_frequencies(labeled_maps, cfg.num_classes);
  return ds;
}

}  // namespace dars
