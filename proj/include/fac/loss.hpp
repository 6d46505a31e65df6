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
#include "fac/sampling.hpp"
#include "fac/tensor.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace fac {

struct LossConfig {
  double tau = 0.1;
  /// Positives and negatives per anchor.
  std::size_t k = 51;
  std::size_t total_pair_budget = 4096;
  double alpha = 1.0;
  double beta = 1.0;
  double sinkhorn_epsilon = 0.05;
  std::size_t sinkhorn_iters = 50;

  void validate() const;
  /// floor(budget / (2 views * H anchors * 2 pair kinds)); throws when that is 0.
  [[nodiscard]] static std::size_t k_from_budget(std::size_t budget, std::size_t regions_per_view);
};

/// Mean of the listed rows of `rows` ([N, c]), l2-normalized, as a [1, c] tensor.
/// Throws ArgumentError for an empty or out-of-range index list.
[[nodiscard]] ad::Tensor regional_mean(const ad::Tensor& rows, std::span<const std::size_t> index);
/// One normalized regional mean per index list: [A, c].
[[nodiscard]] ad::Tensor regional_means(const ad::Tensor& rows, const std::vector<std::vector<std::size_t>>& regions);

/// A anchors, each with n_pos positives and n_neg negatives stored
/// anchor-major ([A * n_pos, c] and [A * n_neg, c]).
struct ContrastBatch {
  ad::Tensor anchors;
  ad::Tensor positives;
  ad::Tensor negatives;
  std::size_t n_pos = 0;
  std::size_t n_neg = 0;

  void validate() const;
};

/// Mean over all (anchor, positive) pairs of
///   -log(exp(a.p / tau) / (exp(a.p / tau) + sum_neg exp(a.n / tau))).
[[nodiscard]] ad::Tensor info_nce(const ContrastBatch& batch, double tau);

/// Same objective from precomputed logits: pos [A, P], neg [A, K]. With
/// `pos_weights` ([A, P], rows summing to 1) the pair terms of each anchor are
/// combined with those weights and averaged over anchors; otherwise all A * P
/// pair terms are averaged.
[[nodiscard]] ad::Tensor info_nce_from_logits(const ad::Tensor& pos_logits, const ad::Tensor& neg_logits,
                                              const ad::Tensor* pos_weights = nullptr);

/// Points of one view grouped by the selection: selected[s] lists the view's
/// points in region selection.region_ids[s]; background lists the points of
/// every other region.
struct ViewRegions {
  std::vector<std::vector<std::size_t>> selected;
  std::vector<std::size_t> background;
};

[[nodiscard]] ViewRegions view_regions(std::span<const std::uint32_t> region_of_view, const RegionSelection& selection);

/// k indices drawn uniformly from `pool`, without replacement when the pool is
/// large enough; otherwise the pool is reshuffled and concatenated until k
/// entries are collected, and `with_replacement` is set.
[[nodiscard]] std::vector<std::size_t> draw_from_pool(std::span<const std::size_t> pool, std::size_t k,
                                                      CounterRng rng, bool* with_replacement = nullptr);

/// Sampled keys of one anchor. direction 0 anchors in view a against keys in
/// view b, direction 1 the reverse; slot indexes the selection.
struct AnchorDraw {
  int direction = 0;
  std::size_t slot = 0;
  std::vector<std::size_t> positives;
  std::vector<std::size_t> negatives;
};

struct GeoResult {
  ad::Tensor loss;
  /// Anchors without points in either view or without negatives, summed over directions.
  std::size_t skipped = 0;
  bool resampled = false;
  std::vector<AnchorDraw> draws;
};

/// Regional-anchor contrast on backbone features ([N_a, c], [N_b, c]):
/// positives from the same region in the other view, negatives from the other
/// selected regions there. Symmetrized over the two directions. Throws
/// ContractError when every anchor is skipped.
[[nodiscard]] GeoResult loss_geo(const ad::Tensor& d_a, const ad::Tensor& d_b, const ViewRegions& a,
                                 const ViewRegions& b, const LossConfig& cfg, CounterRng rng);

/// Differentiable top-k weights of one score vector (see ad::sinkhorn_topk_rows).
[[nodiscard]] ad::Tensor soft_topk(const ad::Tensor& scores, std::size_t k, double epsilon, std::size_t iters);

struct FeaResult {
  ad::Tensor loss;
  std::size_t skipped = 0;
  /// Some background pool was smaller than k.
  bool resampled = false;
  std::vector<AnchorDraw> draws;  // positives left empty: every key row is a weighted positive
};

/// Feature-matching contrast on gated features: each anchor's cosine
/// similarities to every row of the other view pass through soft top-k, the
/// weighted rows act as positives, and k background rows of the other view
/// act as negatives. Symmetrized over the two directions. Throws
/// ContractError when no anchor has a background pool to draw from.
[[nodiscard]] FeaResult match_and_loss_fea(const ad::Tensor& f_a, const ad::Tensor& f_b, const ViewRegions& a,
                                           const ViewRegions& b, const LossConfig& cfg, CounterRng rng);

/// alpha * l_geo + beta * l_fea.
[[nodiscard]] ad::Tensor loss_sum(const ad::Tensor& l_geo, const ad::Tensor& l_fea, double alpha, double beta);

}  // namespace fac
