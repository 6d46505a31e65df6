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

#include "fac/scene.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace fac {

/// Partition of a cloud into regions 0..n_regions-1, none empty.
struct Segmentation {
  std::vector<std::uint32_t> region_of;
  std::size_t n_regions = 0;

  /// Throws ContractError unless ids form a gap-free range with no empty region.
  void validate() const;
  /// Point indices per region, each list ascending.
  [[nodiscard]] std::vector<std::vector<std::size_t>> members() const;

  friend bool operator==(const Segmentation&, const Segmentation&) = default;
};

struct OversegParams {
  double voxel_size = 0.05;
  std::size_t normal_k = 10;
  double max_normal_angle_deg = 15.0;
  std::size_t min_region_points = 10;

  void validate() const;
};

struct RegionStats {
  std::vector<std::size_t> counts;
  std::vector<Vec3> centroids;
  /// Smallest principal axis of each region, oriented toward +z.
  std::vector<Vec3> mean_normals;
  /// Covariance eigenvalues per region, ascending.
  std::vector<Vec3> eigenvalues;

  [[nodiscard]] std::size_t size() const noexcept { return counts.size(); }
};

/// Unit normals from PCA over the k nearest neighbors (self included),
/// oriented toward +z, then +x, then +y when the earlier component is zero.
[[nodiscard]] std::vector<Vec3> estimate_normals(const PointCloud& cloud, std::size_t k);

/// Normal-guided region growing over 26-connected voxels, followed by merging
/// of undersized regions into their most similar neighbor.
[[nodiscard]] Segmentation oversegment(const PointCloud& cloud, const OversegParams& params);

[[nodiscard]] RegionStats region_stats(const PointCloud& cloud, const Segmentation& seg);

/// Region id of every point of a subsampled view, looked up through its
/// source indices. A view may miss regions, so the result is not a partition.
[[nodiscard]] std::vector<std::uint32_t> transport_regions(const Segmentation& seg,
                                                           std::span<const std::size_t> source_index);

/// "FACSG1" sidecar: magic, u64 N, N x u32 region ids (little-endian).
void write_segmentation(const Segmentation& seg, const std::filesystem::path& path);
[[nodiscard]] Segmentation read_segmentation(const std::filesystem::path& path);

}  // namespace fac
