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

#include "dars/pseudo_label.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "dars/errors.hpp"
#include "dars/order_statistics.hpp"
#include "dars/rng.hpp"

namespace dars {

InMemoryProbabilities::InMemoryProbabilities(
    std::vector<std::string> ids, std::vector<ProbabilityVolume> volumes)
    : ids_(std::move(ids)) {
  if (ids_.size() != volumes.size()) {
    throw ShapeError("one image id per probability volume required");
  }
  for (auto& v : volumes) {
    if (num_classes_ == 0) num_classes_ = static_cast<int>(v.num_classes());
    if (static_cast<int>(v.num_classes()) != num_classes_) {
      throw ShapeError("inconsistent class counts in corpus");
    }
    volumes_.push_back(std::make_shared<const ProbabilityVolume>(std::move(v)));
  }
}

ManifestProbabilities::ManifestProbabilities(DatasetManifest manifest)
    : manifest_(std::move(manifest)) {
  for (const auto& e : manifest_.entries) {
    if (!e.prob_path) {
      throw ManifestError("entry '" + e.image_id + "' has no prob_path");
    }
  }
}

std::shared_ptr<const ProbabilityVolume> ManifestProbabilities::load(
    std::size_t i) const {
  auto v = std::make_shared<const ProbabilityVolume>(
      load_probabilities(*manifest_.entries[i].prob_path));
  if (static_cast<int>(v->num_classes()) != manifest_.num_classes) {
    throw ShapeError("entry '" + manifest_.entries[i].image_id +
                     "' class count differs from the manifest");
  }
  return v;
}

float threshold_sentinel() { return std::nextafter(1.0f, 2.0f); }

namespace {

void check_source(const ProbabilitySource& probs) {
  if (probs.size() == 0) throw EmptyDistributionError("empty prediction corpus");
}

/// Scan emitting (argmax class, confidence) or (0, confidence) per pixel.
ShardScanFn confidence_scan(const ProbabilitySource& probs, bool per_class,
                            std::size_t shards) {
  return [&probs, per_class, shards](std::size_t s, const EmitFn& emit) {
    const auto range = shard_range(probs.size(), shards, s);
    std::vector<std::uint8_t> labels;
    std::vector<float> conf;
    for (std::size_t i = range.begin; i < range.end; ++i) {
      const auto vol = probs.load(i);
      if (static_cast<int>(vol->num_classes()) != probs.num_classes()) {
        throw ShapeError("inconsistent class count for " + probs.image_id(i));
      }
      labels.resize(vol->pixel_count());
      conf.resize(vol->pixel_count());
      argmax_all(*vol, labels, conf);
      for (std::size_t p = 0; p < labels.size(); ++p) {
        emit(per_class ? labels[p] : 0, conf[p]);
      }
    }
  };
}

ExecOptions normalized(const ExecOptions& exec) {
  return {std::max<std::size_t>(exec.shards, 1),
          std::max<std::size_t>(exec.threads, 1)};
}

std::uint64_t histogram_total(const PoolHistogram& hist) {
  std::uint64_t total = 0;
  for (std::size_t p = 0; p < hist.pools(); ++p) total += hist.count(p);
  return total;
}

ThresholdPlan plan_from_selection(const PoolHistogram& hist,
                                  std::span<const PoolSelection> sel,
                                  const DesiredCounts& n) {
  const std::size_t c = sel.size();
  ThresholdPlan plan;
  plan.n = n;
  plan.t.assign(c, threshold_sentinel());
  plan.n_tilde.assign(c, 0);
  plan.s.assign(c, 1.0);
  plan.deficient.assign(c, false);
  plan.candidates.assign(c, 0);
  for (std::size_t j = 0; j < c; ++j) {
    plan.candidates[j] = hist.count(j);
    if (n.n[j] == 0) continue;
    if (sel[j].selected) {
      plan.t[j] = sel[j].kth_largest;
      plan.n_tilde[j] = sel[j].at_or_above;
    } else {
      plan.deficient[j] = true;
      if (hist.count(j) > 0) plan.t[j] = hist.min_value(j);
      plan.n_tilde[j] = hist.count(j);
    }
    if (plan.n_tilde[j] > 0) {
      plan.s[j] = std::min(1.0, static_cast<double>(n.n[j]) /
                                    static_cast<double>(plan.n_tilde[j]));
    }
  }
  return plan;
}

// Thresholds one volume; adds its argmax counts into `argmax_counts`.
LabelMap threshold_volume(const ProbabilityVolume& probs,
                          std::span<const float> t,
                          std::span<std::uint64_t> argmax_counts) {
  if (probs.num_classes() != t.size()) {
    throw ShapeError("plan has C=" + std::to_string(t.size()) +
                     ", volume has C=" + std::to_string(probs.num_classes()));
  }
  std::vector<std::uint8_t> labels(probs.pixel_count());
  std::vector<float> conf(probs.pixel_count());
  argmax_all(probs, labels, conf);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    ++argmax_counts[labels[i]];
    if (conf[i] < t[labels[i]]) labels[i] = kIgnore;
  }
  return LabelMap(probs.height(), probs.width(), static_cast<int>(t.size()),
                  std::move(labels));
}

struct ApplyOutput {
  std::vector<LabelMap> candidates;
  std::vector<std::uint64_t> passed;  // per class
  std::vector<std::uint64_t> argmax;  // per class
};

ApplyOutput apply_corpus(const ProbabilitySource& probs,
                         const ThresholdPlan& plan, const ExecOptions& exec) {
  const auto c = static_cast<std::size_t>(plan.num_classes());
  ApplyOutput out;
  out.candidates.resize(probs.size());
  std::vector<std::vector<std::uint64_t>> argmax(
      probs.size(), std::vector<std::uint64_t>(c, 0));
  parallel_for(probs.size(), exec.threads, [&](std::size_t i) {
    out.candidates[i] = threshold_volume(*probs.load(i), plan.t, argmax[i]);
  });
  out.passed.assign(c, 0);
  out.argmax.assign(c, 0);
  for (std::size_t i = 0; i < probs.size(); ++i) {
    accumulate_label_counts(out.candidates[i], out.passed);
    for (std::size_t j = 0; j < c; ++j) out.argmax[j] += argmax[i][j];
  }
  return out;
}

std::vector<std::string> all_ids(const ProbabilitySource& probs) {
  std::vector<std::string> ids;
  ids.reserve(probs.size());
  for (std::size_t i = 0; i < probs.size(); ++i) ids.push_back(probs.image_id(i));
  return ids;
}

void finalize(PseudoLabelResult& r, const ClassDistribution* target) {
  const std::size_t c = r.plan.t.size();
  r.realized_counts.assign(c, 0);
  for (const auto& m : r.labels) accumulate_label_counts(m, r.realized_counts);
  const std::uint64_t labeled = std::accumulate(
      r.realized_counts.begin(), r.realized_counts.end(), std::uint64_t{0});
  if (labeled == 0) {
    throw EmptyResultError("no pixel received a pseudo label");
  }
  r.realized_freqs.resize(c);
  for (std::size_t j = 0; j < c; ++j) {
    r.realized_freqs[j] = static_cast<double>(r.realized_counts[j]) /
                          static_cast<double>(labeled);
  }
  r.labeled_fraction =
      static_cast<double>(labeled) / static_cast<double>(r.total_pixels);
  if (target) {
    if (target->num_classes() != static_cast<int>(c)) {
      throw ShapeError("target distribution class count mismatch");
    }
    r.kl_to_target = kl_divergence(target->freqs, r.realized_freqs, true);
  } else {
    r.kl_to_target = std::numeric_limits<double>::quiet_NaN();
  }
}

}  // namespace

ThresholdPlan compute_thresholds(const ProbabilitySource& probs,
                                 const DesiredCounts& n,
                                 const ExecOptions& exec_in) {
  check_source(probs);
  const ExecOptions exec = normalized(exec_in);
  const auto c = static_cast<std::size_t>(probs.num_classes());
  if (n.n.size() != c) throw ShapeError("desired counts class count mismatch");
  const auto scan = confidence_scan(probs, true, exec.shards);
  const PoolHistogram hist = build_histogram(c, scan, exec);
  const auto sel = refine_selection(hist, scan, n.n, exec);
  return plan_from_selection(hist, sel, n);
}

LabelMap apply_thresholds(const ProbabilityVolume& probs,
                          const ThresholdPlan& plan) {
  std::vector<std::uint64_t> unused(probs.num_classes(), 0);
  return threshold_volume(probs, plan.t, unused);
}

std::uint64_t SamplingKey::value() const {
  return mix(mix(mix(seed, hash_string(image_id)), pixel_index), cls);
}

std::vector<LabelMap> sample_exact(std::span<const std::string> image_ids,
                                   std::span<const LabelMap> candidates,
                                   const ThresholdPlan& plan,
                                   std::uint64_t seed,
                                   const ExecOptions& exec_in) {
  const ExecOptions exec = normalized(exec_in);
  if (image_ids.size() != candidates.size()) {
    throw ConsistencyError("one image id per candidate map required");
  }
  const auto c = static_cast<std::size_t>(plan.num_classes());
  std::vector<std::uint64_t> found(c, 0);
  for (const auto& m : candidates) {
    if (m.num_classes() != plan.num_classes()) {
      throw ConsistencyError("candidate map class count differs from plan");
    }
    accumulate_label_counts(m, found);
  }
  for (std::size_t j = 0; j < c; ++j) {
    if (found[j] != plan.n_tilde[j]) {
      throw ConsistencyError("class " + std::to_string(j) + ": plan expects " +
                             std::to_string(plan.n_tilde[j]) +
                             " candidates, maps hold " +
                             std::to_string(found[j]));
    }
  }

  // Classes that must drop pixels; every other class keeps all candidates.
  std::vector<bool> thinned(c, false);
  bool any = false;
  for (std::size_t j = 0; j < c; ++j) {
    thinned[j] = plan.n_tilde[j] > plan.n.n[j];
    any = any || thinned[j];
  }
  if (!any) return {candidates.begin(), candidates.end()};

  struct KeyRec {
    std::uint64_t key;
    std::uint32_t image;
    std::uint32_t pixel;
  };
  auto less = [&](const KeyRec& a, const KeyRec& b) {
    if (a.key != b.key) return a.key < b.key;
    if (a.image != b.image) {
      const int cmp = image_ids[a.image].compare(image_ids[b.image]);
      if (cmp != 0) return cmp < 0;
    }
    return a.pixel < b.pixel;
  };

  std::vector<std::vector<std::vector<KeyRec>>> partial(
      exec.shards, std::vector<std::vector<KeyRec>>(c));
  parallel_for(exec.shards, exec.threads, [&](std::size_t s) {
    const auto range = shard_range(candidates.size(), exec.shards, s);
    for (std::size_t i = range.begin; i < range.end; ++i) {
      const auto values = candidates[i].values();
      for (std::size_t p = 0; p < values.size(); ++p) {
        const std::uint8_t v = values[p];
        if (v == kIgnore || !thinned[v]) continue;
        const SamplingKey key{seed, image_ids[i], p, v};
        partial[s][v].push_back({key.value(), static_cast<std::uint32_t>(i),
                                 static_cast<std::uint32_t>(p)});
      }
    }
  });

  // Per thinned class, the largest retained record; keep iff rec <= cut.
  std::vector<std::optional<KeyRec>> cut(c);
  for (std::size_t j = 0; j < c; ++j) {
    if (!thinned[j]) continue;
    std::vector<KeyRec> recs;
    recs.reserve(plan.n_tilde[j]);
    for (auto& shard : partial) {
      recs.insert(recs.end(), shard[j].begin(), shard[j].end());
      std::vector<KeyRec>().swap(shard[j]);
    }
    const std::uint64_t keep = plan.n.n[j];
    if (keep == 0) continue;
    const auto nth = recs.begin() + static_cast<std::ptrdiff_t>(keep - 1);
    std::nth_element(recs.begin(), nth, recs.end(), less);
    cut[j] = *nth;
  }

  std::vector<LabelMap> out(candidates.size());
  parallel_for(candidates.size(), exec.threads, [&](std::size_t i) {
    const auto values = candidates[i].values();
    std::vector<std::uint8_t> kept(values.begin(), values.end());
    for (std::size_t p = 0; p < kept.size(); ++p) {
      const std::uint8_t v = kept[p];
      if (v == kIgnore || !thinned[v]) continue;
      const KeyRec rec{SamplingKey{seed, image_ids[i], p, v}.value(),
                       static_cast<std::uint32_t>(i),
                       static_cast<std::uint32_t>(p)};
      if (!cut[v] || less(*cut[v], rec)) kept[p] = kIgnore;
    }
    out[i] = LabelMap(candidates[i].height(), candidates[i].width(),
                      candidates[i].num_classes(), std::move(kept));
  });
  return out;
}

const char* method_name(LabelMethod method) {
  switch (method) {
    case LabelMethod::kDars: return "dars";
    case LabelMethod::kSt: return "st";
    case LabelMethod::kCbst: return "cbst";
  }
  return "?";
}

LabelMethod parse_method(std::string_view name) {
  if (name == "dars") return LabelMethod::kDars;
  if (name == "st") return LabelMethod::kSt;
  if (name == "cbst") return LabelMethod::kCbst;
  throw ConfigError("unknown labeling method '" + std::string(name) + "'");
}

PseudoLabelResult dars_label(const ProbabilitySource& probs,
                             const ClassDistribution& target, double alpha,
                             std::uint64_t seed, const ExecOptions& exec_in) {
  check_source(probs);
  const ExecOptions exec = normalized(exec_in);
  const auto c = static_cast<std::size_t>(probs.num_classes());
  if (target.num_classes() != static_cast<int>(c)) {
    throw ShapeError("target distribution has C=" +
                     std::to_string(target.num_classes()) + ", corpus C=" +
                     std::to_string(c));
  }
  const auto scan = confidence_scan(probs, true, exec.shards);
  const PoolHistogram hist = build_histogram(c, scan, exec);

  PseudoLabelResult r;
  r.method = LabelMethod::kDars;
  r.alpha = alpha;
  r.seed = seed;
  r.total_pixels = histogram_total(hist);
  const DesiredCounts n = desired_counts(target, alpha, r.total_pixels);
  r.plan = plan_from_selection(hist, refine_selection(hist, scan, n.n, exec), n);

  bool all_deficient = true;
  for (std::size_t j = 0; j < c; ++j) {
    if (n.n[j] > 0 && !r.plan.deficient[j]) all_deficient = false;
  }
  if (all_deficient) {
    throw EmptyResultError("every class with a positive desired count is "
                           "deficient");
  }

  ApplyOutput applied = apply_corpus(probs, r.plan, exec);
  if (applied.passed != r.plan.n_tilde) {
    throw ConsistencyError("threshold pass disagrees with the plan");
  }
  r.image_ids = all_ids(probs);
  r.labels = sample_exact(r.image_ids, applied.candidates, r.plan, seed, exec);
  finalize(r, &target);
  return r;
}

PseudoLabelResult dars_label(const DatasetManifest& unlabeled,
                             const ClassDistribution& target, double alpha,
                             std::uint64_t seed, const ExecOptions& exec) {
  return dars_label(ManifestProbabilities(unlabeled), target, alpha, seed,
                    exec);
}

PseudoLabelResult st_label(const ProbabilitySource& probs, double alpha,
                           const ClassDistribution* target,
                           const ExecOptions& exec_in) {
  check_source(probs);
  if (!(alpha > 0.0 && alpha <= 100.0)) {
    throw ConfigError("labeling ratio must be in (0, 100]");
  }
  const ExecOptions exec = normalized(exec_in);
  const auto c = static_cast<std::size_t>(probs.num_classes());
  const auto scan = confidence_scan(probs, false, exec.shards);
  const PoolHistogram hist = build_histogram(1, scan, exec);

  PseudoLabelResult r;
  r.method = LabelMethod::kSt;
  r.alpha = alpha;
  r.total_pixels = hist.count(0);
  const std::uint64_t k = labeling_budget(alpha, r.total_pixels);
  const std::uint64_t ks[] = {k};
  const auto sel = refine_selection(hist, scan, ks, exec);
  const float t = sel[0].selected ? sel[0].kth_largest : threshold_sentinel();

  r.plan.t.assign(c, t);
  r.plan.s.assign(c, 1.0);
  r.plan.deficient.assign(c, false);
  ApplyOutput applied = apply_corpus(probs, r.plan, exec);
  // One global pool: every pixel above t* is kept, so the per-class
  // "desired" count is what passed.
  r.plan.n_tilde = applied.passed;
  r.plan.n = DesiredCounts{applied.passed, alpha, r.total_pixels};
  r.plan.candidates = applied.argmax;
  r.image_ids = all_ids(probs);
  r.labels = std::move(applied.candidates);
  finalize(r, target);
  return r;
}

PseudoLabelResult cbst_label(const ProbabilitySource& probs, double alpha,
                             const ClassDistribution* target,
                             const ExecOptions& exec_in) {
  check_source(probs);
  if (!(alpha > 0.0 && alpha <= 100.0)) {
    throw ConfigError("labeling ratio must be in (0, 100]");
  }
  const ExecOptions exec = normalized(exec_in);
  const auto c = static_cast<std::size_t>(probs.num_classes());
  const auto scan = confidence_scan(probs, true, exec.shards);
  const PoolHistogram hist = build_histogram(c, scan, exec);

  PseudoLabelResult r;
  r.method = LabelMethod::kCbst;
  r.alpha = alpha;
  r.total_pixels = histogram_total(hist);
  std::vector<std::uint64_t> k(c);
  for (std::size_t j = 0; j < c; ++j) {
    k[j] = labeling_budget(alpha, hist.count(j));
  }
  const auto sel = refine_selection(hist, scan, k, exec);
  r.plan.n = DesiredCounts{k, alpha, r.total_pixels};
  r.plan.t.assign(c, threshold_sentinel());
  r.plan.n_tilde.assign(c, 0);
  r.plan.s.assign(c, 1.0);
  r.plan.deficient.assign(c, false);
  r.plan.candidates.assign(c, 0);
  for (std::size_t j = 0; j < c; ++j) {
    r.plan.candidates[j] = hist.count(j);
    if (sel[j].selected) {
      r.plan.t[j] = sel[j].kth_largest;
      r.plan.n_tilde[j] = sel[j].at_or_above;
    }
  }
  ApplyOutput applied = apply_corpus(probs, r.plan, exec);
  if (applied.passed != r.plan.n_tilde) {
    throw ConsistencyError("threshold pass disagrees with the plan");
  }
  r.image_ids = all_ids(probs);
  r.labels = std::move(applied.candidates);
  finalize(r, target);
  return r;
}

PseudoLabelResult run_labeling(LabelMethod method,
                               const ProbabilitySource& probs, double alpha,
                               const ClassDistribution* target,
                               std::uint64_t seed, const ExecOptions& exec) {
  switch (method) {
    case LabelMethod::kDars:
      if (!target) throw ConfigError("dars labeling requires a target");
      return dars_label(probs, *target, alpha, seed, exec);
    case LabelMethod::kSt: {
      auto r = st_label(probs, alpha, target, exec);
      r.seed = seed;
      return r;
    }
    case LabelMethod::kCbst: {
      auto r = cbst_label(probs, alpha, target, exec);
      r.seed = seed;
      return r;
    }
  }
  throw ConfigError("unknown labeling method");
}

}  // namespace dars
