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

#include "fac/overseg.hpp"
#include "fac/scene.hpp"

#include <filesystem>
#include <span>
#include <vector>

namespace fac {

/// Foreground regions chosen to supply contrast anchors, in selection order.
struct RegionSelection {
  std::vector<std::uint32_t> region_ids;
  std::size_t requested = 0;

  [[nodiscard]] bool contains(std::uint32_t region) const;
};

/// Median-rank sampling: the min(H, I) regions whose point counts are closest
/// to the lower median count, ties broken by the smaller region id.
[[nodiscard]] RegionSelection sample_median_regions(const RegionStats& stats, std::size_t H);

/// Per-region foreground score in [0, 1].
class ForegroundScorer {
 public:
  virtual ~ForegroundScorer() = default;
  [[nodiscard]] virtual std::vector<double> score(const PointCloud& cloud,
                                                  const Segmentation& seg) const = 0;
};

/// score = (1 - planarity) * height_term with planarity = 1 - l_min / l_mid of
/// the region covariance, and height_term ramping from 0 at floor or ceiling
/// height of the cloud to 1 at `height_band` of the vertical range away.
class HeuristicScorer final : public ForegroundScorer {
 public:
  explicit HeuristicScorer(double height_band = 0.1) : height_band_(height_band) {}
  [[nodiscard]] std::vector<double> score(const PointCloud& cloud, const Segmentation& seg) const override;

 private:
  double height_band_;
};

/// Reads precomputed scores from a text sidecar of "region_id score" lines.
class FileScorer final : public ForegroundScorer {
 public:
  explicit FileScorer(std::filesystem::path path) : path_(std::move(path)) {}
  [[nodiscard]] std::vector<double> score(const PointCloud& cloud, const Segmentation& seg) const override;

 private:
  std::filesystem::path path_;
};

/// Every region scores `value`.
class ConstantScorer final : public ForegroundScorer {
 public:
  explicit ConstantScorer(double value = 1.0) : value_(value) {}
  [[nodiscard]] std::vector<double> score(const PointCloud&, const Segmentation& seg) const override {
    return std::vector<double>(seg.n_regions, value_);
  }

 private:
  double value_;
};

/// Runs a scorer and checks its output (length, finiteness, range).
/// Scorer exceptions and invalid outputs surface as ScorerError.
[[nodiscard]] std::vector<double> score_foreground(const ForegroundScorer& scorer,
                                                   const PointCloud& cloud, const Segmentation& seg);

/// Median sampling restricted to regions scoring at least `threshold`, topped
/// up from the remaining regions by descending score when too few qualify.
[[nodiscard]] RegionSelection select_prompted_regions(std::span<const double> scores,
                                                      const RegionStats& stats, std::size_t H,
                                                      double threshold);

void write_scores(std::span<const double> scores, const std::filesystem::path& path);

}  // namespace fac
