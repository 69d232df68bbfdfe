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

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "dars/parallel.hpp"

namespace dars {

/// Callback receiving one (pool, value) observation.
using EmitFn = std::function<void(std::size_t pool, float value)>;
/// Scans shard `shard` of the input, calling emit for every observation.
/// Must produce the same multiset of observations each time it is called.
using ShardScanFn = std::function<void(std::size_t shard, const EmitFn& emit)>;

/// Result of a k-th-largest query for one pool.
struct PoolSelection {
  std::uint64_t count = 0;   ///< observations in the pool
  float min_value = 0.0f;    ///< smallest observation (valid if count > 0)
  bool selected = false;     ///< 0 < k <= count
  float kth_largest = 0.0f;  ///< valid if selected
  std::uint64_t at_or_above = 0;  ///< observations >= kth_largest
};

/// Exact k-th largest value per pool over a sharded stream of non-negative
/// floats, in two scans:
///   1. per-shard histograms over the top 16 bits of the IEEE-754 pattern
///      (order-preserving for non-negative floats), merged by summation;
///   2. per pool, the values that fall in the bracketing bucket are
///      collected and the rank inside the bucket is resolved by selection.
/// Pools with k == 0 or k > count are reported unselected after scan 1.
std::vector<PoolSelection> select_kth_largest(
    std::size_t pools, const ShardScanFn& scan,
    std::span<const std::uint64_t> k, const ExecOptions& exec);

/// First scan only; pools with count/min but no selection. Exposed so
/// callers that derive k from the pool sizes (class-balanced thresholds)
/// can reuse the same histogram.
class PoolHistogram {
 public:
  static constexpr std::size_t kBuckets = 1u << 15;

  explicit PoolHistogram(std::size_t pools);

  void add(std::size_t pool, float value);
  void merge(const PoolHistogram& other);

  std::size_t pools() const { return counts_.size(); }
  std::uint64_t count(std::size_t pool) const { return counts_[pool]; }
  float min_value(std::size_t pool) const { return mins_[pool]; }
  std::uint64_t bucket(std::size_t pool, std::size_t b) const {
    return buckets_[pool * kBuckets + b];
  }

  static std::size_t bucket_of(float value);

 private:
  std::vector<std::uint64_t> buckets_;
  std::vector<std::uint64_t> counts_;
  std::vector<float> mins_;
};

PoolHistogram build_histogram(std::size_t pools, const ShardScanFn& scan,
                              const ExecOptions& exec);

/// Second scan given a finished histogram.
std::vector<PoolSelection> refine_selection(const PoolHistogram& hist,
                                            const ShardScanFn& scan,
                                            std::span<const std::uint64_t> k,
                                            const ExecOptions& exec);

}  // namespace dars
