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

#include <span>
#include <string>

#include "dars/distribution.hpp"
#include "dars/pseudo_label.hpp"
#include "dars/scenegen.hpp"
#include "dars/selftrain.hpp"
#include "dars/toymodel.hpp"
#include "json.hpp"

namespace dars {

using json = nlohmann::json;

/// {"counts": [...], "freqs": [...], "total": n}
json to_json(const ClassDistribution& d);
/// Accepts a stats document (counts) or any {"freqs": [...]} document.
ClassDistribution distribution_from_json(const json& j);
ClassDistribution load_distribution(const fs::path& path);

/// Pseudo-label report: method, alpha, seed, thresholds, n, n_tilde, s,
/// deficient, realized_freqs, kl_to_target, labeled_fraction.
json to_json(const PseudoLabelResult& r);
json to_json(const EvalReport& r);
json to_json(const SceneConfig& cfg);

SceneConfig scene_config_from_json(const json& j);
TrainConfig train_config_from_json(const json& j);
RoundSchedule schedule_from_json(const json& j);
EvalOptions eval_options_from_json(const json& j, const EvalOptions& defaults);

/// epoch,labeled_loss,pseudo_loss,objective
std::string loss_trace_csv(std::span<const EpochLoss> trace);
/// class,count,freq
std::string distribution_csv(const ClassDistribution& d);
/// class,iou,present
std::string iou_csv(const EvalReport& r);

/// Pretty-printed document with a trailing newline.
std::string dump(const json& j);

json read_json(const fs::path& path);

}  // namespace dars
