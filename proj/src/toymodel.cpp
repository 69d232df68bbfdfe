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

#include "dars/toymodel.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numeric>

#include "dars/errors.hpp"
#include "json.hpp"

namespace dars {

LinearPixelModel LinearPixelModel::zeros(int num_classes) {
  if (num_classes < 1 || num_classes > 255) {
    throw ConfigError("model class count must be in [1, 255]");
  }
  LinearPixelModel m;
  m.num_classes = num_classes;
  m.weights.assign(static_cast<std::size_t>(num_classes) * kFeatureDim, 0.0f);
  m.bias.assign(static_cast<std::size_t>(num_classes), 0.0f);
  return m;
}

void LinearPixelModel::validate() const {
  if (num_classes < 1 || num_classes > 255 || feature_dim != kFeatureDim ||
      weights.size() != static_cast<std::size_t>(num_classes) * feature_dim ||
      bias.size() != static_cast<std::size_t>(num_classes)) {
    throw ValidationError("model parameter shapes are inconsistent");
  }
  for (float v : weights) {
    if (!std::isfinite(v)) throw ValidationError("non-finite model weight");
  }
  for (float v : bias) {
    if (!std::isfinite(v)) throw ValidationError("non-finite model bias");
  }
}

std::vector<double> LinearPixelModel::params() const {
  std::vector<double> p(weights.begin(), weights.end());
  p.insert(p.end(), bias.begin(), bias.end());
  return p;
}

void LinearPixelModel::set_params(std::span<const double> p) {
  if (p.size() != param_count()) throw ShapeError("parameter count mismatch");
  for (std::size_t i = 0; i < weights.size(); ++i) {
    weights[i] = static_cast<float>(p[i]);
  }
  for (std::size_t j = 0; j < bias.size(); ++j) {
    bias[j] = static_cast<float>(p[weights.size() + j]);
  }
  validate();
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    throw ConfigError("learning_rate must be positive");
  }
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(l2 >= 0.0)) throw ConfigError("l2 must be >= 0");
  if (augment && !(augment->lo > 0.0 && augment->lo <= augment->hi)) {
    throw ConfigError("augmentation range must satisfy 0 < lo <= hi");
  }
}

FeatureVolume extract_features(const FeatureVolume& image) {
  if (image.channels() != 3) throw ShapeError("expected 3 feature channels");
  const std::size_t h = image.height();
  const std::size_t w = image.width();
  const std::size_t n = h * w;
  std::vector<float> out(kFeatureDim * n);
  std::copy(image.data().begin(), image.data().end(), out.begin());
  const double sx = w > 1 ? 1.0 / static_cast<double>(w - 1) : 0.0;
  const double sy = h > 1 ? 1.0 / static_cast<double>(h - 1) : 0.0;
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const std::size_t i = y * w + x;
      out[3 * n + i] = static_cast<float>(static_cast<double>(x) * sx);
      out[4 * n + i] = static_cast<float>(static_cast<double>(y) * sy);
      out[5 * n + i] = 1.0f;
    }
  }
  return FeatureVolume(kFeatureDim, h, w, std::move(out));
}

ForwardResult forward(const LinearPixelModel& model,
                      const FeatureVolume& features) {
  model.validate();
  if (features.channels() != model.feature_dim) {
    throw ShapeError("feature dimension does not match the model");
  }
  const auto c = static_cast<std::size_t>(model.num_classes);
  const std::size_t f = model.feature_dim;
  const std::size_t n = features.pixel_count();
  const auto x = features.data();
  std::vector<float> logits(c * n);
  std::vector<float> probs(c * n);
  std::vector<double> z(c);
  for (std::size_t i = 0; i < n; ++i) {
    double zmax = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < c; ++j) {
      double acc = model.bias[j];
      for (std::size_t k = 0; k < f; ++k) {
        acc += static_cast<double>(model.weights[j * f + k]) * x[k * n + i];
      }
      z[j] = acc;
      zmax = std::max(zmax, acc);
    }
    double sum = 0.0;
    for (std::size_t j = 0; j < c; ++j) sum += std::exp(z[j] - zmax);
    for (std::size_t j = 0; j < c; ++j) {
      logits[j * n + i] = static_cast<float>(z[j]);
      probs[j * n + i] = static_cast<float>(std::exp(z[j] - zmax) / sum);
    }
  }
  return {LogitVolume(c, features.height(), features.width(), std::move(logits)),
          ProbabilityVolume(c, features.height(), features.width(),
                            std::move(probs))};
}

ForwardResult predict_image(const LinearPixelModel& model,
                            const FeatureVolume& image) {
  return forward(model, extract_features(image));
}

double batch_loss_and_gradient(int num_classes, std::span<const double> params,
                               std::span<const WeightedExample> batch,
                               double l2, std::span<double> grad,
                               std::span<double> per_image_loss) {
  const auto c = static_cast<std::size_t>(num_classes);
  const std::size_t f = kFeatureDim;
  if (params.size() != c * f + c || grad.size() != params.size()) {
    throw ShapeError("parameter/gradient size mismatch");
  }
  if (!per_image_loss.empty() && per_image_loss.size() != batch.size()) {
    throw ShapeError("per-image loss buffer size mismatch");
  }
  const double* w = params.data();
  const double* b = params.data() + c * f;
  std::fill(grad.begin(), grad.end(), 0.0);
  double loss = 0.0;
  std::vector<double> gw(c * f), gb(c), z(c);
  double feat[kFeatureDim];
  for (std::size_t e = 0; e < batch.size(); ++e) {
    const auto& ex = batch[e];
    if (ex.features->channels() != f) throw ShapeError("feature dim mismatch");
    if (ex.labels->pixel_count() != ex.features->pixel_count()) {
      throw ShapeError("label/feature size mismatch");
    }
    const std::size_t n = ex.features->pixel_count();
    const auto x = ex.features->data();
    const auto y = ex.labels->values();
    std::fill(gw.begin(), gw.end(), 0.0);
    std::fill(gb.begin(), gb.end(), 0.0);
    double image_loss = 0.0;
    std::size_t valid = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const std::uint8_t label = y[i];
      if (label == kIgnore) continue;
      if (label >= c) throw ShapeError("label exceeds model class count");
      ++valid;
      for (std::size_t k = 0; k < f; ++k) feat[k] = x[k * n + i];
      double zmax = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < c; ++j) {
        double acc = b[j];
        for (std::size_t k = 0; k < f; ++k) acc += w[j * f + k] * feat[k];
        z[j] = acc;
        zmax = std::max(zmax, acc);
      }
      double sum = 0.0;
      for (std::size_t j = 0; j < c; ++j) {
        z[j] = std::exp(z[j] - zmax);
        sum += z[j];
      }
      image_loss += std::log(sum) - std::log(z[label]);
      for (std::size_t j = 0; j < c; ++j) {
        const double dz = z[j] / sum - (j == label ? 1.0 : 0.0);
        gb[j] += dz;
        for (std::size_t k = 0; k < f; ++k) gw[j * f + k] += dz * feat[k];
      }
    }
    if (valid == 0) {
      if (!per_image_loss.empty()) {
        per_image_loss[e] = std::numeric_limits<double>::quiet_NaN();
      }
      continue;
    }
    const double scale = ex.weight / static_cast<double>(valid);
    loss += scale * image_loss;
    if (!per_image_loss.empty()) {
      per_image_loss[e] = image_loss / static_cast<double>(valid);
    }
    for (std::size_t q = 0; q < c * f; ++q) grad[q] += scale * gw[q];
    for (std::size_t j = 0; j < c; ++j) grad[c * f + j] += scale * gb[j];
  }
  if (l2 > 0.0) {
    for (std::size_t q = 0; q < c * f; ++q) {
      loss += 0.5 * l2 * w[q] * w[q];
      grad[q] += l2 * w[q];
    }
  }
  return loss;
}

namespace {

std::size_t valid_pixels(const LabelMap& m) {
  const auto v = m.values();
  return static_cast<std::size_t>(
      std::count_if(v.begin(), v.end(), [](auto x) { return x != kIgnore; }));
}

struct Item {
  TrainingImage image;
  int term;  // 0 labeled, 1 pseudo
};

struct Prepared {
  FeatureVolume features;
  LabelMap labels;
};

Prepared prepare(const Item& item, const TrainConfig& cfg, int epoch,
                 std::size_t item_index) {
  if (!cfg.augment) {
    return {extract_features(*item.image.image), *item.image.labels};
  }
  Rng rng(mix(mix(cfg.seed, static_cast<std::uint64_t>(epoch)), item_index));
  auto aug = augment_random_scale(*item.image.image, *item.image.labels,
                                  *cfg.augment, rng);
  return {extract_features(aug.image), std::move(aug.labels)};
}

double nan_mean(double sum, std::size_t count) {
  return count ? sum / static_cast<double>(count)
               : std::numeric_limits<double>::quiet_NaN();
}

}  // namespace

TrainResult train(const LinearPixelModel& init,
                  std::span<const TrainingImage> labeled,
                  std::span<const TrainingImage> pseudo,
                  const TrainConfig& cfg, const ExecOptions& exec) {
  init.validate();
  cfg.validate();
  std::vector<Item> items;
  std::size_t n_terms[2] = {0, 0};
  auto add = [&](std::span<const TrainingImage> set, int term) {
    for (const auto& img : set) {
      if (img.image->channels() != 3 ||
          img.image->pixel_count() != img.labels->pixel_count()) {
        throw ShapeError("training image/label shape mismatch");
      }
      if (img.labels->num_classes() != init.num_classes) {
        throw ShapeError("training labels have a different class count");
      }
      if (valid_pixels(*img.labels) == 0) continue;
      items.push_back({img, term});
      ++n_terms[term];
    }
  };
  add(labeled, 0);
  add(pseudo, 1);
  if (n_terms[0] == 0) {
    throw EmptyDatasetError("no labeled training pixels");
  }

  const std::size_t batch = cfg.batch_size;
  std::vector<std::size_t> members[2];
  for (std::size_t i = 0; i < items.size(); ++i) {
    members[items[i].term].push_back(i);
  }
  // Each step draws up to B images from every present term and averages
  // within the term, so a step estimates the gradient of
  // (labeled mean + pseudo mean). An epoch is one pass over the larger term;
  // the smaller term is reshuffled and repeated as needed.
  const std::size_t longest = std::max(n_terms[0], n_terms[1]);
  const std::size_t steps = (longest + batch - 1) / batch;

  auto make_streams = [&](int epoch) {
    Rng rng(mix(cfg.seed ^ 0x53485546464C45ULL, static_cast<std::uint64_t>(epoch)));
    std::array<std::vector<std::size_t>, 2> streams;
    for (int term = 0; term < 2; ++term) {
      auto& out = streams[static_cast<std::size_t>(term)];
      const auto& m = members[term];
      if (m.empty()) continue;
      while (out.size() < longest) {
        std::vector<std::size_t> order = m;
        for (std::size_t i = order.size(); i > 1; --i) {
          std::swap(order[i - 1], order[rng.below(i)]);
        }
        out.insert(out.end(), order.begin(), order.end());
      }
      out.resize(longest);
    }
    return streams;
  };

  std::vector<double> params = init.params();
  std::vector<double> grad(params.size());
  TrainResult result;

  auto run_epoch = [&](int epoch, const std::array<std::vector<std::size_t>, 2>& streams,
                       bool update) {
    double sums[2] = {0.0, 0.0};
    std::size_t counts[2] = {0, 0};
    for (std::size_t step = 0; step < steps; ++step) {
      const std::size_t begin = step * batch;
      const std::size_t end = std::min(longest, begin + batch);
      std::vector<std::size_t> chosen;
      std::vector<double> weights;
      for (const auto& stream : streams) {
        if (stream.empty()) continue;
        for (std::size_t s = begin; s < end; ++s) {
          chosen.push_back(stream[s]);
          weights.push_back(1.0 / static_cast<double>(end - begin));
        }
      }
      std::vector<Prepared> prepared(chosen.size());
      parallel_for(chosen.size(), exec.threads, [&](std::size_t k) {
        prepared[k] = prepare(items[chosen[k]], cfg, epoch, chosen[k]);
      });
      std::vector<WeightedExample> examples;
      for (std::size_t k = 0; k < prepared.size(); ++k) {
        examples.push_back({&prepared[k].features, &prepared[k].labels, weights[k]});
      }
      std::vector<double> losses(examples.size());
      batch_loss_and_gradient(init.num_classes, params, examples, cfg.l2, grad,
                              losses);
      for (std::size_t k = 0; k < losses.size(); ++k) {
        if (std::isnan(losses[k])) continue;
        const int term = items[chosen[k]].term;
        sums[term] += losses[k];
        ++counts[term];
      }
      if (update) {
        for (std::size_t q = 0; q < params.size(); ++q) {
          params[q] -= cfg.learning_rate * grad[q];
        }
      }
    }
    EpochLoss el;
    el.epoch = epoch;
    el.labeled_loss = nan_mean(sums[0], counts[0]);
    el.pseudo_loss = nan_mean(sums[1], counts[1]);
    el.objective = (counts[0] ? el.labeled_loss : 0.0) +
                   (counts[1] ? el.pseudo_loss : 0.0);
    return el;
  };

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto streams = make_streams(epoch);
    if (epoch == 1) {
      // Entry 0: the initial parameters on the first epoch's inputs.
      result.trace.push_back(run_epoch(1, streams, false));
      result.trace.back().epoch = 0;
    }
    result.trace.push_back(run_epoch(epoch, streams, true));
    for (double p : params) {
      if (!std::isfinite(p)) throw NumericError("training diverged");
    }
  }

  result.model = init;
  result.model.set_params(params);
  result.model.seed = cfg.seed;
  result.model.epochs_trained = init.epochs_trained +
                                static_cast<std::uint64_t>(cfg.epochs);
  return result;
}

TrainResult train(const LinearPixelModel& init, const DatasetManifest& labeled,
                  const DatasetManifest* pseudo, const TrainConfig& cfg,
                  const ExecOptions& exec) {
  if (labeled.entries.empty()) throw EmptyDatasetError("empty labeled manifest");
  auto load = [](const DatasetManifest& m, std::vector<FeatureVolume>& images,
                 std::vector<LabelMap>& labels) {
    for (const auto& e : m.entries) {
      if (!e.image_path || !e.label_path) {
        throw ManifestError("entry '" + e.image_id +
                            "' needs image_path and label_path for training");
      }
      images.push_back(load_features(*e.image_path));
      labels.push_back(load_label_map(*e.label_path, m.num_classes));
    }
  };
  std::vector<FeatureVolume> li, pi;
  std::vector<LabelMap> ll, pl;
  load(labeled, li, ll);
  if (pseudo) load(*pseudo, pi, pl);
  std::vector<TrainingImage> lt, pt;
  for (std::size_t i = 0; i < li.size(); ++i) lt.push_back({&li[i], &ll[i]});
  for (std::size_t i = 0; i < pi.size(); ++i) pt.push_back({&pi[i], &pl[i]});
  return train(init, lt, pt, cfg, exec);
}

DatasetManifest predict_corpus(const LinearPixelModel& model,
                               const DatasetManifest& images,
                               const fs::path& out_dir,
                               const ExecOptions& exec) {
  std::error_code ec;
  fs::create_directories(out_dir / "logits", ec);
  fs::create_directories(out_dir / "probs", ec);
  if (ec) throw IoError("cannot create " + out_dir.string());
  DatasetManifest out;
  out.num_classes = model.num_classes;
  out.entries.resize(images.entries.size());
  parallel_for(images.entries.size(), exec.threads, [&](std::size_t i) {
    const auto& e = images.entries[i];
    if (!e.image_path) {
      throw ManifestError("entry '" + e.image_id + "' has no image_path");
    }
    const auto pred = predict_image(model, load_features(*e.image_path));
    ManifestEntry o = e;
    o.label_path.reset();
    o.logit_path = out_dir / "logits" / (e.image_id + ".tensor");
    o.prob_path = out_dir / "probs" / (e.image_id + ".tensor");
    write_tensor(pred.logits.to_tensor(), *o.logit_path);
    write_tensor(pred.probs.to_tensor(), *o.prob_path);
    out.entries[i] = std::move(o);
  });
  save_manifest(out, out_dir / "predictions.json");
  return out;
}

void save_model(const LinearPixelModel& model, const fs::path& dir) {
  model.validate();
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string());
  const auto c = static_cast<std::uint64_t>(model.num_classes);
  write_tensor(TensorFile{{c, model.feature_dim}, model.weights},
               dir / "model_weights.tensor");
  write_tensor(TensorFile{{1, c}, model.bias}, dir / "model_bias.tensor");
  const nlohmann::json meta = {{"F", model.feature_dim},
                               {"C", model.num_classes},
                               {"seed", model.seed},
                               {"epochs_trained", model.epochs_trained},
                               {"weights", "model_weights.tensor"},
                               {"bias", "model_bias.tensor"}};
  write_file_atomic(dir / "model.json", meta.dump(2) + "\n");
}

LinearPixelModel load_model(const fs::path& dir_or_json) {
  const fs::path dir = fs::is_directory(dir_or_json)
                           ? dir_or_json
                           : dir_or_json.parent_path();
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(read_file(dir / "model.json"));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("model.json: ") + e.what());
  }
  LinearPixelModel m;
  try {
    m.num_classes = meta.at("C").get<int>();
    m.feature_dim = meta.at("F").get<std::size_t>();
    m.seed = meta.value("seed", std::uint64_t{0});
    m.epochs_trained = meta.value("epochs_trained", std::uint64_t{0});
    const auto w = read_tensor(dir / meta.value("weights", "model_weights.tensor"));
    const auto b = read_tensor(dir / meta.value("bias", "model_bias.tensor"));
    if (w.dtype() != DType::kF32 || b.dtype() != DType::kF32) {
      throw FormatError("model tensors must be f32");
    }
    m.weights = std::get<std::vector<float>>(w.values);
    m.bias = std::get<std::vector<float>>(b.values);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("model.json: ") + e.what());
  }
  m.validate();
  return m;
}

}  // namespace dars
