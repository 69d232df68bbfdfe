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

#include "dars/order_statistics.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>
#include <string>

#include "dars/errors.hpp"

namespace dars {

PoolHistogram::PoolHistogram(std::size_t pools)
    : buckets_(pools * kBuckets, 0),
      counts_(pools, 0),
      mins_(pools, std::numeric_limits<float>::infinity()) {}

std::size_t PoolHistogram::bucket_of(float value) {
  if (!(value >= 0.0f)) {
    throw NumericError("order statistics need non-negative values, got " +
                       std::to_string(value));
  }
  value += 0.0f;  // -0 -> +0
  return std::bit_cast<std::uint32_t>(value) >> 16;
}

void PoolHistogram::add(std::size_t pool, float value) {
  ++buckets_[pool * kBuckets + bucket_of(value)];
  ++counts_[pool];
  mins_[pool] = std::min(mins_[pool], value);
}

void PoolHistogram::merge(const PoolHistogram& other) {
  for (std::size_t i = 0; i < buckets_.size(); ++i) {
    buckets_[i] += other.buckets_[i];
  }
  for (std::size_t p = 0; p < counts_.size(); ++p) {
    counts_[p] += other.counts_[p];
    mins_[p] = std::min(mins_[p], other.mins_[p]);
  }
}

PoolHistogram build_histogram(std::size_t pools, const ShardScanFn& scan,
                              const ExecOptions& exec) {
  const std::size_t shards = std::max<std::size_t>(exec.shards, 1);
  std::vector<PoolHistogram> partial(shards, PoolHistogram(pools));
  parallel_for(shards, exec.threads, [&](std::size_t s) {
    auto& h = partial[s];
    scan(s, [&h, pools](std::size_t pool, float v) {
      if (pool >= pools) throw ShapeError("pool index out of range");
      h.add(pool, v);
    });
  });
  for (std::size_t s = 1; s < shards; ++s) partial[0].merge(partial[s]);
  return std::move(partial[0]);
}

std::vector<PoolSelection> refine_selection(const PoolHistogram& hist,
                                            const ShardScanFn& scan,
                                            std::span<const std::uint64_t> k,
                                            const ExecOptions& exec) {
  const std::size_t pools = hist.pools();
  if (k.size() != pools) throw ShapeError("one k per pool required");

  struct Bracket {
    bool active = false;
    std::size_t bucket = 0;
    std::uint64_t above = 0;  // observations in higher buckets
    std::uint64_t rank = 0;   // 1-based rank from the top inside the bucket
  };
  std::vector<Bracket> brackets(pools);
  std::vector<PoolSelection> out(pools);
  bool any_active = false;
  for (std::size_t p = 0; p < pools; ++p) {
    out[p].count = hist.count(p);
    out[p].min_value = hist.count(p) ? hist.min_value(p) : 0.0f;
    if (k[p] == 0 || k[p] > hist.count(p)) continue;
    std::uint64_t above = 0;
    for (std::size_t b = PoolHistogram::kBuckets; b-- > 0;) {
      const std::uint64_t here = hist.bucket(p, b);
      if (above + here >= k[p]) {
        brackets[p] = {true, b, above, k[p] - above};
        break;
      }
      above += here;
    }
    any_active = true;
  }
  if (!any_active) return out;

  const std::size_t shards = std::max<std::size_t>(exec.shards, 1);
  std::vector<std::vector<std::vector<float>>> partial(
      shards, std::vector<std::vector<float>>(pools));
  parallel_for(shards, exec.threads, [&](std::size_t s) {
    auto& mine = partial[s];
    scan(s, [&](std::size_t pool, float v) {
      const auto& br = brackets[pool];
      if (br.active && PoolHistogram::bucket_of(v) == br.bucket) {
        mine[pool].push_back(v + 0.0f);
      }
    });
  });

  for (std::size_t p = 0; p < pools; ++p) {
    const auto& br = brackets[p];
    if (!br.active) continue;
    std::vector<float> values;
    for (auto& shard : partial) {
      values.insert(values.end(), shard[p].begin(), shard[p].end());
      std::vector<float>().swap(shard[p]);
    }
    if (values.size() != hist.bucket(p, br.bucket)) {
      throw ConsistencyError("shard scan is not repeatable");
    }
    const auto nth = values.begin() + static_cast<std::ptrdiff_t>(br.rank - 1);
    std::nth_element(values.begin(), nth, values.end(), std::greater<>());
    const float t = *nth;
    const auto ties_and_above = static_cast<std::uint64_t>(
        std::count_if(values.begin(), values.end(),
                      [t](float v) { return v >= t; }));
    out[p].selected = true;
    out[p].kth_largest = t;
    out[p].at_or_above = br.above + ties_and_above;
  }
  return out;
}

std::vector<PoolSelection> select_kth_largest(
    std::size_t pools, const ShardScanFn& scan,
    std::span<const std::uint64_t> k, const ExecOptions& exec) {
  const PoolHistogram hist = build_histogram(pools, scan, exec);
  return refine_selection(hist, scan, k, exec);
}

}  // namespace dars
