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

#include "dars/json_io.hpp"

#include <cmath>
#include <iomanip>
#include <sstream>

#include "dars/errors.hpp"

namespace dars {
namespace {

json number(double v) {
  if (!std::isfinite(v)) return nullptr;
  return v;
}

json numbers(std::span<const double> v) {
  json a = json::array();
  for (double x : v) a.push_back(number(x));
  return a;
}

std::string fmt_double(double v) {
  if (!std::isfinite(v)) return "";
  std::ostringstream ss;
  ss << std::setprecision(17) << v;
  return ss.str();
}

template <typename T>
T get_or(const json& j, const char* key, T fallback) {
  return j.contains(key) ? j.at(key).get<T>() : fallback;
}

}  // namespace

json to_json(const ClassDistribution& d) {
  return {{"counts", d.counts}, {"freqs", numbers(d.freqs)}, {"total", d.total}};
}

ClassDistribution distribution_from_json(const json& j) {
  try {
    if (j.contains("counts")) {
      return ClassDistribution::from_counts(
          j.at("counts").get<std::vector<std::uint64_t>>());
    }
    const auto freqs = j.at("freqs").get<std::vector<double>>();
    return ClassDistribution::from_freqs(freqs);
  } catch (const json::exception& e) {
    throw FormatError(std::string("distribution document: ") + e.what());
  }
}

ClassDistribution load_distribution(const fs::path& path) {
  return distribution_from_json(read_json(path));
}

json to_json(const PseudoLabelResult& r) {
  const auto& p = r.plan;
  json t = json::array();
  for (float v : p.t) t.push_back(static_cast<double>(v));
  json deficient = json::array();
  for (bool b : p.deficient) deficient.push_back(b);
  return {{"method", method_name(r.method)},
          {"alpha", r.alpha},
          {"seed", r.seed},
          {"thresholds", std::move(t)},
          {"n", p.n.n},
          {"n_tilde", p.n_tilde},
          {"s", numbers(p.s)},
          {"deficient", std::move(deficient)},
          {"candidates", p.candidates},
          {"realized_counts", r.realized_counts},
          {"realized_freqs", numbers(r.realized_freqs)},
          {"kl_to_target", number(r.kl_to_target)},
          {"labeled_fraction", number(r.labeled_fraction)},
          {"total_pixels", r.total_pixels}};
}

json to_json(const EvalReport& r) {
  json buckets = json::array();
  for (const auto& b : r.accuracy_by_size) {
    buckets.push_back({{"min_area", b.min_area},
                       {"max_area", b.max_area == 0 ? json(nullptr)
                                                    : json(b.max_area)},
                       {"components", b.components},
                       {"pixels", b.pixels},
                       {"correct", b.correct},
                       {"accuracy", number(b.accuracy)}});
  }
  json present = json::array();
  for (bool b : r.present) present.push_back(b);
  json confusion = json::array();
  const auto c = static_cast<std::size_t>(r.num_classes);
  for (std::size_t i = 0; i < c; ++i) {
    confusion.push_back(std::vector<std::uint64_t>(
        r.confusion.begin() + static_cast<std::ptrdiff_t>(i * c),
        r.confusion.begin() + static_cast<std::ptrdiff_t>((i + 1) * c)));
  }
  return {{"num_classes", r.num_classes},
          {"miou", number(r.miou)},
          {"tail_miou", number(r.tail_miou)},
          {"pixel_accuracy", number(r.pixel_accuracy)},
          {"per_class_iou", numbers(r.per_class_iou)},
          {"present", std::move(present)},
          {"group_miou", numbers(r.group_miou)},
          {"accuracy_by_size", std::move(buckets)},
          {"missed", r.missed},
          {"confusion", std::move(confusion)}};
}

json to_json(const SceneConfig& cfg) {
  json classes = json::array();
  for (const auto& c : cfg.classes) {
    classes.push_back({{"occurrence", c.occurrence},
                       {"size_min", c.size_min},
                       {"size_max", c.size_max},
                       {"color", c.color},
                       {"group", c.group}});
  }
  return {{"num_classes", cfg.num_classes},
          {"height", cfg.height},
          {"width", cfg.width},
          {"background_class", cfg.background_class},
          {"noise_sigma", cfg.noise_sigma},
          {"seed", cfg.seed},
          {"classes", std::move(classes)}};
}

SceneConfig scene_config_from_json(const json& j) {
  SceneConfig cfg;
  try {
    if (j.contains("preset")) {
      const auto name = j.at("preset").get<std::string>();
      if (name != "default") throw ConfigError("unknown preset '" + name + "'");
      cfg = SceneConfig::default_preset(get_or<std::uint64_t>(j, "seed", 1));
    }
    cfg.num_classes = get_or(j, "num_classes", cfg.num_classes);
    cfg.height = get_or(j, "height", cfg.height);
    cfg.width = get_or(j, "width", cfg.width);
    cfg.background_class = get_or(j, "background_class", cfg.background_class);
    cfg.noise_sigma = get_or(j, "noise_sigma", cfg.noise_sigma);
    cfg.seed = get_or(j, "seed", cfg.seed);
    if (j.contains("classes")) {
      cfg.classes.clear();
      for (const auto& c : j.at("classes")) {
        ClassSpec s;
        s.occurrence = get_or(c, "occurrence", 0.0);
        s.size_min = get_or(c, "size_min", 0.0);
        s.size_max = get_or(c, "size_max", 0.0);
        s.color = c.at("color").get<std::array<float, 3>>();
        s.group = get_or(c, "group", -1);
        cfg.classes.push_back(s);
      }
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("scene config: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

TrainConfig train_config_from_json(const json& j) {
  TrainConfig cfg;
  try {
    cfg.learning_rate = get_or(j, "learning_rate", cfg.learning_rate);
    cfg.epochs = get_or(j, "epochs", cfg.epochs);
    cfg.batch_size = get_or(j, "batch_size", cfg.batch_size);
    cfg.l2 = get_or(j, "l2", cfg.l2);
    cfg.seed = get_or(j, "seed", cfg.seed);
    if (j.contains("scale_range")) {
      const auto r = j.at("scale_range").get<std::array<double, 2>>();
      cfg.augment = ScaleRange{r[0], r[1]};
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("train config: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

RoundSchedule schedule_from_json(const json& j) {
  RoundSchedule s;
  try {
    if (j.contains("base_scale")) {
      const auto r = j.at("base_scale").get<std::array<double, 2>>();
      s.base = {r[0], r[1]};
    }
    for (const auto& r : j.at("rounds")) {
      RoundSpec spec;
      spec.k = r.at("k").get<int>();
      spec.alpha = get_or(r, "alpha", 0.0);
      spec.beta_min = get_or(r, "beta_min", 0.0);
      spec.beta_max = get_or(r, "beta_max", 0.0);
      spec.epochs = get_or(r, "epochs", 1);
      spec.method = parse_method(get_or<std::string>(r, "method", "dars"));
      spec.use_ts = get_or(r, "use_ts", false);
      s.rounds.push_back(spec);
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("schedule: ") + e.what());
  }
  s.validate();
  return s;
}

EvalOptions eval_options_from_json(const json& j, const EvalOptions& defaults) {
  EvalOptions o = defaults;
  try {
    if (j.contains("tail_classes")) {
      o.tail_classes = j.at("tail_classes").get<std::vector<int>>();
    }
    if (j.contains("size_edges")) {
      o.size_edges = j.at("size_edges").get<std::vector<std::uint64_t>>();
    }
    if (j.contains("groups")) {
      o.groups = j.at("groups").get<std::vector<std::vector<int>>>();
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("eval options: ") + e.what());
  }
  return o;
}

std::string loss_trace_csv(std::span<const EpochLoss> trace) {
  std::string out = "epoch,labeled_loss,pseudo_loss,objective\n";
  for (const auto& e : trace) {
    out += std::to_string(e.epoch) + ',' + fmt_double(e.labeled_loss) + ',' +
           fmt_double(e.pseudo_loss) + ',' + fmt_double(e.objective) + '\n';
  }
  return out;
}

std::string distribution_csv(const ClassDistribution& d) {
  std::string out = "class,count,freq\n";
  for (std::size_t j = 0; j < d.counts.size(); ++j) {
    out += std::to_string(j) + ',' + std::to_string(d.counts[j]) + ',' +
           fmt_double(d.freqs[j]) + '\n';
  }
  return out;
}

std::string iou_csv(const EvalReport& r) {
  std::string out = "class,iou,present\n";
  for (std::size_t j = 0; j < r.per_class_iou.size(); ++j) {
    out += std::to_string(j) + ',' + fmt_double(r.per_class_iou[j]) + ',' +
           (r.present[j] ? "1" : "0") + '\n';
  }
  return out;
}

std::string dump(const json& j) { return j.dump(2) + "\n"; }

json read_json(const fs::path& path) {
  try {
    return json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

}  // namespace dars
