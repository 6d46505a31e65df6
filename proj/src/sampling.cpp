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

#include "fac/sampling.hpp"

#include "fac/error.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace fac {

bool RegionSelection::contains(std::uint32_t region) const {
  return std::find(region_ids.begin(), region_ids.end(), region) != region_ids.end();
}

namespace {

std::vector<std::uint32_t> median_rank(std::span<const std::size_t> counts,
                                       std::vector<std::uint32_t> candidates, std::size_t H) {
  if (candidates.empty()) return {};
  std::vector<std::size_t> sorted;
  sorted.reserve(candidates.size());
  for (std::uint32_t r : candidates) sorted.push_back(counts[r]);
  std::sort(sorted.begin(), sorted.end());
  const auto median = static_cast<long long>(sorted[(sorted.size() - 1) / 2]);
  auto gap = [&](std::uint32_t r) { return std::llabs(static_cast<long long>(counts[r]) - median); };
  std::sort(candidates.begin(), candidates.end(), [&](std::uint32_t a, std::uint32_t b) {
    const long long ga = gap(a);
    const long long gb = gap(b);
    return ga < gb || (ga == gb && a < b);
  });
  candidates.resize(std::min(H, candidates.size()));
  return candidates;
}

}  // namespace

RegionSelection sample_median_regions(const RegionStats& stats, std::size_t H) {
  if (H < 1) throw ArgumentError("H must be at least 1");
  if (stats.size() == 0) throw ArgumentError("no regions to sample");
  std::vector<std::uint32_t> all(stats.size());
  for (std::size_t r = 0; r < all.size(); ++r) all[r] = static_cast<std::uint32_t>(r);
  return {median_rank(stats.counts, std::move(all), H), H};
}

std::vector<double> HeuristicScorer::score(const PointCloud& cloud, const Segmentation& seg) const {
  const RegionStats stats = region_stats(cloud, seg);
  double zmin = cloud.position(0).z();
  double zmax = zmin;
  for (const Vec3& p : cloud.positions()) {
    zmin = std::min(zmin, p.z());
    zmax = std::max(zmax, p.z());
  }
  const double range = zmax - zmin;
  std::vector<double> out(stats.size());
  for (std::size_t r = 0; r < stats.size(); ++r) {
    const Vec3& ev = stats.eigenvalues[r];
    const double planarity = ev[1] > 0.0 ? 1.0 - ev[0] / ev[1] : 1.0;
    double height = 0.0;
    if (range > 0.0) {
      const double t = (stats.centroids[r].z() - zmin) / range;
      height = std::clamp(std::min(t, 1.0 - t) / height_band_, 0.0, 1.0);
    }
    out[r] = std::clamp((1.0 - planarity) * height, 0.0, 1.0);
  }
  return out;
}

std::vector<double> FileScorer::score(const PointCloud&, const Segmentation& seg) const {
  std::ifstream in(path_);
  if (!in) throw ScorerError("cannot open score file " + path_.string());
  std::vector<double> out(seg.n_regions, 0.0);
  std::vector<char> seen(seg.n_regions, 0);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream ss(line);
    long long id = -1;
    double value = 0.0;
    std::string extra;
    if (!(ss >> id >> value) || (ss >> extra)) {
      throw ScorerError(path_.string() + ":" + std::to_string(lineno) + ": expected 'region_id score'");
    }
    if (id < 0 || static_cast<std::size_t>(id) >= seg.n_regions || seen[id]) {
      throw ScorerError(path_.string() + ":" + std::to_string(lineno) + ": bad or duplicate region id");
    }
    seen[id] = 1;
    out[id] = value;
  }
  if (std::find(seen.begin(), seen.end(), 0) != seen.end()) {
    throw ScorerError(path_.string() + ": missing scores for some regions");
  }
  return out;
}

std::vector<double> score_foreground(const ForegroundScorer& scorer, const PointCloud& cloud,
                                     const Segmentation& seg) {
  if (seg.region_of.size() != cloud.size()) {
    throw ArgumentError("segmentation length does not match the cloud");
  }
  std::vector<double> scores;
  try {
    scores = scorer.score(cloud, seg);
  } catch (const ScorerError&) {
    throw;
  } catch (const std::exception& e) {
    throw ScorerError(std::string("scorer failed: ") + e.what());
  }
  if (scores.size() != seg.n_regions) throw ScorerError("scorer returned the wrong number of scores");
  for (double s : scores) {
    if (!std::isfinite(s) || s < 0.0 || s > 1.0) throw ScorerError("scorer returned a score outside [0, 1]");
  }
  return scores;
}

RegionSelection select_prompted_regions(std::span<const double> scores, const RegionStats& stats,
                                        std::size_t H, double threshold) {
  if (H < 1) throw ArgumentError("H must be at least 1");
  if (scores.size() != stats.size()) throw ArgumentError("one score per region is required");
  if (stats.size() == 0) throw ArgumentError("no regions to sample");
  if (!std::isfinite(threshold)) throw ArgumentError("threshold must be finite");

  std::vector<std::uint32_t> candidates;
  std::vector<std::uint32_t> rejected;
  for (std::size_t r = 0; r < scores.size(); ++r) {
    (scores[r] >= threshold ? candidates : rejected).push_back(static_cast<std::uint32_t>(r));
  }
  RegionSelection sel{median_rank(stats.counts, std::move(candidates), H), H};
  if (sel.region_ids.size() < H) {
    std::stable_sort(rejected.begin(), rejected.end(),
                     [&](std::uint32_t a, std::uint32_t b) { return scores[a] > scores[b]; });
    for (std::uint32_t r : rejected) {
      if (sel.region_ids.size() >= H) break;
      sel.region_ids.push_back(r);
    }
  }
  return sel;
}

void write_scores(std::span<const double> scores, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out.precision(17);
  for (std::size_t r = 0; r < scores.size(); ++r) out << r << ' ' << scores[r] << '\n';
  if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace fac
