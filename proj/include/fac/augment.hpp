// Copyright 2026 The FAC Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include "fac/rng.hpp"
#include "fac/scene.hpp"

#include <cstdint>
#include <utility>
#include <vector>

namespace fac {

struct AugmentConfig {
  std::size_t n_sample = 2040;
  double overlap_ratio = 0.2;
  double rotation_range_deg = 180.0;
  double scale_min = 0.8;
  double scale_max = 1.2;
  double flip_prob = 0.5;
  std::uint64_t seed = 0;

  void validate() const;
  /// floor(overlap_ratio * n_sample).
  [[nodiscard]] std::size_t shared_count() const;
};

/// Two independently augmented subsamples of one cloud. Point i of view_a is
/// source point source_index_a[i]; every overlap pair (i_a, i_b) refers to the
/// same source point.
struct ViewPair {
  PointCloud view_a;
  PointCloud view_b;
  std::vector<std::size_t> source_index_a;
  std::vector<std::size_t> source_index_b;
  std::vector<std::pair<std::size_t, std::size_t>> overlap;
  SimilarityTransform transform_a;
  SimilarityTransform transform_b;
};

/// Random rotation about a uniformly drawn axis, uniform scale and
/// independent x/y flips, as drawn for each view.
[[nodiscard]] SimilarityTransform sample_transform(const AugmentConfig& cfg, CounterRng& rng);

[[nodiscard]] ViewPair make_view_pair(const PointCloud& cloud, const AugmentConfig& cfg);

}  // namespace fac
