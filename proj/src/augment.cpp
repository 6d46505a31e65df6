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

#include "fac/augment.hpp"

#include "fac/error.hpp"
#include "fac/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace fac {

void AugmentConfig::validate() const {
  if (n_sample < 1) throw ArgumentError("n_sample must be positive");
  if (!(overlap_ratio > 0.0 && overlap_ratio <= 1.0)) {
    throw ArgumentError("overlap_ratio must lie in (0, 1]");
  }
  if (shared_count() < 1) throw ArgumentError("overlap_ratio * n_sample must be at least 1");
  if (!(rotation_range_deg >= 0.0 && rotation_range_deg <= 180.0)) {
    throw ArgumentError("rotation_range_deg must lie in [0, 180]");
  }
  if (!(scale_min > 0.0 && scale_min <= scale_max)) throw ArgumentError("bad scale range");
  if (!(flip_prob >= 0.0 && flip_prob <= 1.0)) throw ArgumentError("flip_prob must lie in [0, 1]");
}

std::size_t AugmentConfig::shared_count() const {
  return static_cast<std::size_t>(std::floor(overlap_ratio * static_cast<double>(n_sample)));
}

SimilarityTransform sample_transform(const AugmentConfig& cfg, CounterRng& rng) {
  SimilarityTransform t;
  Vec3 axis;
  do {
    axis = Vec3(rng.normal(), rng.normal(), rng.normal());
  } while (axis.norm() < 1e-12);
  const double range = cfg.rotation_range_deg * std::numbers::pi / 180.0;
  t.rotation = axis_angle_rotation(axis, rng.uniform(-range, range));
  t.scale = rng.uniform(cfg.scale_min, cfg.scale_max);
  t.flip_x = rng.bernoulli(cfg.flip_prob);
  t.flip_y = rng.bernoulli(cfg.flip_prob);
  return t;
}

ViewPair make_view_pair(const PointCloud& cloud, const AugmentConfig& cfg) {
  cfg.validate();
  const std::size_t n = cfg.n_sample;
  if (cloud.size() < n) throw ArgumentError("cloud has fewer points than n_sample");
  const std::size_t shared = cfg.shared_count();

  CounterRng rng(cfg.seed);
  const std::vector<std::size_t> shared_idx = rng.derive(0).sample_without_replacement(cloud.size(), shared);

  std::vector<char> is_shared(cloud.size(), 0);
  for (std::size_t i : shared_idx) is_shared[i] = 1;
  std::vector<std::size_t> rest;
  rest.reserve(cloud.size() - shared);
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    if (!is_shared[i]) rest.push_back(i);
  }

  auto draw_view = [&](std::uint64_t stream) {
    CounterRng vr = rng.derive(stream);
    std::vector<std::size_t> src = shared_idx;
    for (std::size_t j : vr.sample_without_replacement(rest.size(), n - shared)) src.push_back(rest[j]);
    vr.shuffle(std::span<std::size_t>(src));
    return src;
  };
  std::vector<std::size_t> src_a = draw_view(1);
  std::vector<std::size_t> src_b = draw_view(2);

  CounterRng ta = rng.derive(3);
  CounterRng tb = rng.derive(4);
  const SimilarityTransform trans_a = sample_transform(cfg, ta);
  const SimilarityTransform trans_b = sample_transform(cfg, tb);

  // Position of each shared source point inside view b.
  std::vector<std::size_t> where_b(cloud.size(), SIZE_MAX);
  for (std::size_t i = 0; i < n; ++i) {
    if (is_shared[src_b[i]]) where_b[src_b[i]] = i;
  }
  std::vector<std::pair<std::size_t, std::size_t>> overlap;
  overlap.reserve(shared);
  for (std::size_t i = 0; i < n; ++i) {
    if (is_shared[src_a[i]]) overlap.emplace_back(i, where_b[src_a[i]]);
  }

  PointCloud view_a = apply_transform(cloud.select(src_a), trans_a);
  PointCloud view_b = apply_transform(cloud.select(src_b), trans_b);
  return ViewPair{std::move(view_a), std::move(view_b), std::move(src_a), std::move(src_b),
                  std::move(overlap), trans_a, trans_b};
}

}  // namespace fac
