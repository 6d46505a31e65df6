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

#include "fac/overseg.hpp"

#include "bytes.hpp"
#include "fac/error.hpp"
#include "fac/spatial.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>
#include <deque>
#include <numbers>
#include <set>
#include <unordered_map>

namespace fac {

void Segmentation::validate() const {
  if (n_regions < 1) throw ContractError("segmentation has no regions");
  std::vector<std::size_t> counts(n_regions, 0);
  for (std::uint32_t r : region_of) {
    if (r >= n_regions) throw ContractError("region id out of range");
    ++counts[r];
  }
  for (std::size_t r = 0; r < n_regions; ++r) {
    if (counts[r] == 0) throw ContractError("region " + std::to_string(r) + " is empty");
  }
}

std::vector<std::vector<std::size_t>> Segmentation::members() const {
  std::vector<std::vector<std::size_t>> out(n_regions);
  for (std::size_t i = 0; i < region_of.size(); ++i) {
    if (region_of[i] >= n_regions) throw ContractError("region id out of range");
    out[region_of[i]].push_back(i);
  }
  return out;
}

void OversegParams::validate() const {
  if (!(voxel_size > 0.0) || !std::isfinite(voxel_size)) throw ArgumentError("voxel_size must be positive");
  if (normal_k < 3) throw ArgumentError("normal_k must be at least 3");
  if (!(max_normal_angle_deg > 0.0 && max_normal_angle_deg <= 90.0)) {
    throw ArgumentError("max_normal_angle must lie in (0, 90]");
  }
  if (min_region_points < 1) throw ArgumentError("min_region_points must be positive");
}

namespace {

Vec3 orient_up(Vec3 n) {
  for (int axis : {2, 0, 1}) {
    if (n[axis] > 0.0) return n;
    if (n[axis] < 0.0) return -n;
  }
  return n;
}

struct Pca {
  Vec3 centroid;
  Vec3 eigenvalues;  // ascending
  Vec3 normal;
};

template <class IndexRange>
Pca pca_of(std::span<const Vec3> pts, const IndexRange& idx) {
  Vec3 c = Vec3::Zero();
  std::size_t n = 0;
  for (std::size_t i : idx) {
    c += pts[i];
    ++n;
  }
  c /= static_cast<double>(n);
  Mat3 cov = Mat3::Zero();
  for (std::size_t i : idx) {
    const Vec3 d = pts[i] - c;
    cov += d * d.transpose();
  }
  cov /= static_cast<double>(n);
  Eigen::SelfAdjointEigenSolver<Mat3> es(cov);
  return {c, es.eigenvalues().cwiseMax(0.0), orient_up(es.eigenvectors().col(0).normalized())};
}

struct KeyHash {
  std::size_t operator()(const VoxelKey& k) const noexcept {
    std::uint64_t h = 0x9E3779B97F4A7C15ULL;
    for (std::int64_t v : k) {
      h ^= static_cast<std::uint64_t>(v) + 0x9E3779B97F4A7C15ULL + (h << 6) + (h >> 2);
    }
    return static_cast<std::size_t>(h);
  }
};

// Voxel cells in ascending key order with a reverse lookup for adjacency.
struct CellIndex {
  std::vector<VoxelKey> keys;
  std::vector<std::vector<std::size_t>> points;
  std::vector<std::size_t> cell_of_point;
  std::unordered_map<VoxelKey, std::size_t, KeyHash> lookup;

  CellIndex(const PointCloud& cloud, double voxel_size) : cell_of_point(cloud.size()) {
    VoxelGrid grid = voxelize(cloud, voxel_size);
    keys.reserve(grid.cells.size());
    points.reserve(grid.cells.size());
    for (auto& [key, pts] : grid.cells) {
      lookup.emplace(key, keys.size());
      for (std::size_t p : pts) cell_of_point[p] = keys.size();
      keys.push_back(key);
      points.push_back(std::move(pts));
    }
  }

  template <class F>
  void for_each_neighbor(std::size_t cell, F&& f) const {
    const VoxelKey& k = keys[cell];
    for (std::int64_t dx = -1; dx <= 1; ++dx) {
      for (std::int64_t dy = -1; dy <= 1; ++dy) {
        for (std::int64_t dz = -1; dz <= 1; ++dz) {
          auto it = lookup.find({k[0] + dx, k[1] + dy, k[2] + dz});
          if (it != lookup.end()) f(it->second);
        }
      }
    }
  }
};

Vec3 unit_or_up(const Vec3& v) {
  const double n = v.norm();
  return n > 0.0 ? Vec3(v / n) : Vec3(Vec3::UnitZ());
}

}  // namespace

std::vector<Vec3> estimate_normals(const PointCloud& cloud, std::size_t k) {
  if (cloud.size() < k) throw ArgumentError("fewer points than normal_k");
  const KnnIndex index(cloud.positions());
  std::vector<Vec3> normals(cloud.size());
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    normals[i] = pca_of(cloud.positions(), index.nearest(cloud.position(i), k)).normal;
  }
  return normals;
}

Segmentation oversegment(const PointCloud& cloud, const OversegParams& params) {
  params.validate();
  const std::vector<Vec3> normals = estimate_normals(cloud, params.normal_k);
  const CellIndex cells(cloud, params.voxel_size);
  const double cos_thr = std::cos(params.max_normal_angle_deg * std::numbers::pi / 180.0);

  constexpr std::uint32_t kUnassigned = UINT32_MAX;
  std::vector<std::uint32_t> region(cloud.size(), kUnassigned);
  std::vector<Vec3> normal_sum;
  std::vector<std::size_t> counts;

  // Region growing; seeds in ascending voxel key, then ascending point index.
  std::deque<std::size_t> queue;
  for (std::size_t c = 0; c < cells.keys.size(); ++c) {
    for (std::size_t seed : cells.points[c]) {
      if (region[seed] != kUnassigned) continue;
      const auto r = static_cast<std::uint32_t>(counts.size());
      region[seed] = r;
      Vec3 sum = normals[seed];
      std::size_t count = 1;
      queue.assign(1, seed);
      while (!queue.empty()) {
        const std::size_t q = queue.front();
        queue.pop_front();
        cells.for_each_neighbor(cells.cell_of_point[q], [&](std::size_t nc) {
          for (std::size_t cand : cells.points[nc]) {
            if (region[cand] != kUnassigned) continue;
            const double d = normals[cand].dot(unit_or_up(sum));
            if (std::abs(d) < cos_thr) continue;
            region[cand] = r;
            sum += d < 0.0 ? Vec3(-normals[cand]) : normals[cand];
            ++count;
            queue.push_back(cand);
          }
        });
      }
      normal_sum.push_back(sum);
      counts.push_back(count);
    }
  }

  // Region adjacency through 26-connected voxels.
  const std::size_t n_grown = counts.size();
  std::vector<std::set<std::uint32_t>> adj(n_grown);
  {
    std::vector<std::vector<std::uint32_t>> in_cell(cells.keys.size());
    for (std::size_t c = 0; c < cells.keys.size(); ++c) {
      std::set<std::uint32_t> s;
      for (std::size_t p : cells.points[c]) s.insert(region[p]);
      in_cell[c].assign(s.begin(), s.end());
    }
    for (std::size_t c = 0; c < cells.keys.size(); ++c) {
      cells.for_each_neighbor(c, [&](std::size_t nc) {
        for (std::uint32_t a : in_cell[c]) {
          for (std::uint32_t b : in_cell[nc]) {
            if (a != b) adj[a].insert(b);
          }
        }
      });
    }
  }

  // Merge undersized regions into the adjacent region with the most similar
  // mean normal; ties go to the smallest id. Repeat until stable.
  std::vector<std::uint32_t> owner(n_grown);
  for (std::uint32_t r = 0; r < n_grown; ++r) owner[r] = r;
  std::vector<char> alive(n_grown, 1);
  for (bool changed = true; changed;) {
    changed = false;
    for (std::uint32_t r = 0; r < n_grown; ++r) {
      if (!alive[r] || counts[r] >= params.min_region_points) continue;
      const Vec3 nr = unit_or_up(normal_sum[r]);
      std::uint32_t best = kUnassigned;
      double best_sim = -1.0;
      for (std::uint32_t s : adj[r]) {
        const double sim = std::abs(nr.dot(unit_or_up(normal_sum[s])));
        if (sim > best_sim) {
          best_sim = sim;
          best = s;
        }
      }
      if (best == kUnassigned) continue;
      counts[best] += counts[r];
      normal_sum[best] += nr.dot(normal_sum[best]) < 0.0 ? Vec3(-normal_sum[r]) : normal_sum[r];
      for (std::uint32_t t : adj[r]) {
        adj[t].erase(r);
        if (t != best) {
          adj[t].insert(best);
          adj[best].insert(t);
        }
      }
      adj[r].clear();
      alive[r] = 0;
      owner[r] = best;
      changed = true;
    }
  }

  std::vector<std::uint32_t> final_id(n_grown, kUnassigned);
  std::uint32_t next = 0;
  for (std::uint32_t r = 0; r < n_grown; ++r) {
    if (alive[r]) final_id[r] = next++;
  }
  Segmentation seg;
  seg.n_regions = next;
  seg.region_of.resize(cloud.size());
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    std::uint32_t r = region[i];
    while (!alive[r]) r = owner[r];
    seg.region_of[i] = final_id[r];
  }
  return seg;
}

RegionStats region_stats(const PointCloud& cloud, const Segmentation& seg) {
  if (seg.region_of.size() != cloud.size()) {
    throw ArgumentError("segmentation length does not match the cloud");
  }
  seg.validate();
  const auto members = seg.members();
  RegionStats stats;
  stats.counts.reserve(seg.n_regions);
  for (const auto& m : members) {
    const Pca p = pca_of(cloud.positions(), m);
    stats.counts.push_back(m.size());
    stats.centroids.push_back(p.centroid);
    stats.mean_normals.push_back(p.normal);
    stats.eigenvalues.push_back(p.eigenvalues);
  }
  return stats;
}

std::vector<std::uint32_t> transport_regions(const Segmentation& seg,
                                             std::span<const std::size_t> source_index) {
  std::vector<std::uint32_t> out(source_index.size());
  for (std::size_t i = 0; i < source_index.size(); ++i) {
    if (source_index[i] >= seg.region_of.size()) throw ArgumentError("source index out of range");
    out[i] = seg.region_of[source_index[i]];
  }
  return out;
}

namespace {
constexpr std::string_view kSegMagic = "FACSG1";
}

void write_segmentation(const Segmentation& seg, const std::filesystem::path& path) {
  detail::ByteWriter w;
  w.bytes(kSegMagic);
  w.u64(seg.region_of.size());
  for (std::uint32_t r : seg.region_of) w.u32(r);
  detail::write_file_bytes(path, w.buffer());
}

Segmentation read_segmentation(const std::filesystem::path& path) {
  const auto data = detail::read_file_bytes(path);
  detail::ByteReader r(data);
  if (data.size() < 14 || r.bytes(6) != kSegMagic) throw FormatError("not a FACSG1 file");
  const std::uint64_t n = r.u64();
  if (r.remaining() != n * 4) throw FormatError("FACSG1 payload size does not match header");
  Segmentation seg;
  seg.region_of.resize(n);
  std::uint32_t max_id = 0;
  for (auto& id : seg.region_of) {
    id = r.u32();
    max_id = std::max(max_id, id);
  }
  seg.n_regions = n == 0 ? 0 : static_cast<std::size_t>(max_id) + 1;
  try {
    seg.validate();
  } catch (const ContractError& e) {
    throw DataError(std::string("segmentation file is not a partition: ") + e.what());
  }
  return seg;
}

}  // namespace fac
