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

#include "fac/loss.hpp"

#include "fac/error.hpp"

#include <cmath>

namespace fac {

using ad::Tensor;

void LossConfig::validate() const {
  if (!(tau > 0.0) || !std::isfinite(tau)) throw ArgumentError("tau must be positive");
  if (k < 1) throw ArgumentError("k must be at least 1");
  if (!(alpha >= 0.0) || !(beta >= 0.0)) throw ArgumentError("loss weights must be non-negative");
  if (!(sinkhorn_epsilon > 0.0)) throw ArgumentError("sinkhorn_epsilon must be positive");
  if (sinkhorn_iters < 1) throw ArgumentError("sinkhorn_iters must be at least 1");
}

std::size_t LossConfig::k_from_budget(std::size_t budget, std::size_t regions_per_view) {
  if (regions_per_view < 1) throw ArgumentError("regions_per_view must be positive");
  const std::size_t k = budget / (2 * regions_per_view * 2);
  if (k < 1) throw ArgumentError("pair budget too small for the number of anchors");
  return k;
}

Tensor regional_mean(const Tensor& rows, std::span<const std::size_t> index) {
  return regional_means(rows, {std::vector<std::size_t>(index.begin(), index.end())});
}

Tensor regional_means(const Tensor& rows, const std::vector<std::vector<std::size_t>>& regions) {
  ad::RowGroups groups;
  for (const auto& r : regions) {
    if (r.empty()) throw ArgumentError("regional mean of an empty region");
    for (std::size_t i : r) {
      if (i >= rows.dim(0)) throw ArgumentError("region index out of range");
    }
    groups.add(r);
  }
  return ad::l2_normalize_rows(ad::group_mean_rows(rows, groups));
}

void ContrastBatch::validate() const {
  if (anchors.rank() != 2 || positives.rank() != 2 || negatives.rank() != 2) {
    throw ShapeError("contrast batch members must be matrices");
  }
  const std::size_t A = anchors.dim(0), c = anchors.dim(1);
  if (A == 0 || n_pos == 0 || n_neg == 0) throw ShapeError("contrast batch is empty");
  if (positives.dim(0) != A * n_pos || negatives.dim(0) != A * n_neg || positives.dim(1) != c ||
      negatives.dim(1) != c) {
    throw ShapeError("contrast batch shapes are inconsistent");
  }
}

namespace {

std::vector<std::size_t> repeat_each(std::size_t count, std::size_t times) {
  std::vector<std::size_t> out(count * times);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = i / times;
  return out;
}

// Dot product of every anchor with its own block of `keys`: [A, per].
Tensor blocked_dots(const Tensor& anchors, const Tensor& keys, std::size_t per) {
  const std::size_t A = anchors.dim(0);
  const auto rep = repeat_each(A, per);
  return ad::reshape(ad::sum_rows(ad::mul(ad::gather_rows(anchors, rep), keys)), {A, per});
}

}  // namespace

Tensor info_nce(const ContrastBatch& batch, double tau) {
  if (!(tau > 0.0)) throw ArgumentError("tau must be positive");
  batch.validate();
  const Tensor pos = ad::scale(blocked_dots(batch.anchors, batch.positives, batch.n_pos), 1.0 / tau);
  const Tensor neg = ad::scale(blocked_dots(batch.anchors, batch.negatives, batch.n_neg), 1.0 / tau);
  return info_nce_from_logits(pos, neg);
}

Tensor info_nce_from_logits(const Tensor& pos_logits, const Tensor& neg_logits, const Tensor* pos_weights) {
  if (pos_logits.rank() != 2 || neg_logits.rank() != 2 || pos_logits.dim(0) != neg_logits.dim(0)) {
    throw ShapeError("logit matrices must share their anchor count");
  }
  const std::size_t A = pos_logits.dim(0), P = pos_logits.dim(1);
  if (A == 0 || P == 0 || neg_logits.dim(1) == 0) throw ShapeError("empty logits");
  // log(exp(pos) + sum exp(neg)) = logsumexp(pos, logsumexp(neg)).
  const Tensor neg_lse = ad::gather_rows(ad::logsumexp_rows(neg_logits), repeat_each(A, P));
  const Tensor pos = ad::reshape(pos_logits, {A * P, 1});
  const Tensor terms = ad::sub(ad::logsumexp_rows(ad::concat_cols(pos, neg_lse)), pos);
  if (pos_weights == nullptr) return ad::mean(terms);
  if (pos_weights->shape() != pos_logits.shape()) throw ShapeError("positive weights must match the logits");
  return ad::scale(ad::sum(ad::mul(terms, ad::reshape(*pos_weights, {A * P, 1}))), 1.0 / static_cast<double>(A));
}

ViewRegions view_regions(std::span<const std::uint32_t> region_of_view, const RegionSelection& selection) {
  ViewRegions out;
  out.selected.resize(selection.region_ids.size());
  std::vector<std::size_t> slot_of;
  for (std::size_t s = 0; s < selection.region_ids.size(); ++s) {
    const std::uint32_t r = selection.region_ids[s];
    if (slot_of.size() <= r) slot_of.resize(r + 1, SIZE_MAX);
    if (slot_of[r] != SIZE_MAX) throw ArgumentError("region selected twice");
    slot_of[r] = s;
  }
  for (std::size_t i = 0; i < region_of_view.size(); ++i) {
    const std::uint32_t r = region_of_view[i];
    if (r < slot_of.size() && slot_of[r] != SIZE_MAX) {
      out.selected[slot_of[r]].push_back(i);
    } else {
      out.background.push_back(i);
    }
  }
  return out;
}

std::vector<std::size_t> draw_from_pool(std::span<const std::size_t> pool, std::size_t k, CounterRng rng,
                                        bool* with_replacement) {
  if (pool.empty()) throw ArgumentError("cannot draw from an empty pool");
  std::vector<std::size_t> out;
  out.reserve(k);
  if (pool.size() >= k) {
    for (std::size_t j : rng.sample_without_replacement(pool.size(), k)) out.push_back(pool[j]);
    return out;
  }
  if (with_replacement) *with_replacement = true;
  std::vector<std::size_t> pass(pool.begin(), pool.end());
  while (out.size() < k) {
    rng.shuffle(std::span<std::size_t>(pass));
    for (std::size_t j = 0; j < pass.size() && out.size() < k; ++j) out.push_back(pass[j]);
  }
  return out;
}

namespace {

// Mean of the directions that produced a loss.
Tensor mean_of(const std::vector<Tensor>& parts) {
  Tensor total = parts[0];
  for (std::size_t i = 1; i < parts.size(); ++i) total = ad::add(total, parts[i]);
  return parts.size() == 1 ? total : ad::scale(total, 1.0 / static_cast<double>(parts.size()));
}

}  // namespace

GeoResult loss_geo(const Tensor& d_a, const Tensor& d_b, const ViewRegions& a, const ViewRegions& b,
                   const LossConfig& cfg, CounterRng rng) {
  cfg.validate();
  if (a.selected.size() != b.selected.size()) throw ArgumentError("views disagree on the selection");
  if (d_a.rank() != 2 || d_b.rank() != 2 || d_a.dim(1) != d_b.dim(1)) throw ShapeError("feature maps differ");
  GeoResult result;
  std::vector<Tensor> parts;
  const Tensor feats[2] = {ad::l2_normalize_rows(d_a), ad::l2_normalize_rows(d_b)};
  const ViewRegions* regions[2] = {&a, &b};
  for (int dir = 0; dir < 2; ++dir) {
    const ViewRegions& anchor_view = *regions[dir];
    const ViewRegions& key_view = *regions[1 - dir];
    const Tensor& anchor_rows = feats[dir];
    const Tensor& key_rows = feats[1 - dir];
    std::vector<std::vector<std::size_t>> anchor_sets;
    std::vector<std::size_t> pos_index, neg_index;
    for (std::size_t s = 0; s < anchor_view.selected.size(); ++s) {
      if (anchor_view.selected[s].empty() || key_view.selected[s].empty()) {
        ++result.skipped;
        continue;
      }
      std::vector<std::size_t> others;
      for (std::size_t t = 0; t < key_view.selected.size(); ++t) {
        if (t != s) others.insert(others.end(), key_view.selected[t].begin(), key_view.selected[t].end());
      }
      if (others.empty()) {
        ++result.skipped;
        continue;
      }
      const CounterRng slot_rng = rng.derive(static_cast<std::uint64_t>(dir)).derive(s);
      AnchorDraw draw{dir, s, draw_from_pool(key_view.selected[s], cfg.k, slot_rng.derive(0), &result.resampled),
                      draw_from_pool(others, cfg.k, slot_rng.derive(1), &result.resampled)};
      pos_index.insert(pos_index.end(), draw.positives.begin(), draw.positives.end());
      neg_index.insert(neg_index.end(), draw.negatives.begin(), draw.negatives.end());
      anchor_sets.push_back(anchor_view.selected[s]);
      result.draws.push_back(std::move(draw));
    }
    if (anchor_sets.empty()) continue;
    const ContrastBatch batch{regional_means(anchor_rows, anchor_sets), ad::gather_rows(key_rows, pos_index),
                              ad::gather_rows(key_rows, neg_index), cfg.k, cfg.k};
    parts.push_back(info_nce(batch, cfg.tau));
  }
  if (parts.empty()) throw ContractError("every selected region was skipped in the geometry loss");
  result.loss = mean_of(parts);
  return result;
}

Tensor soft_topk(const Tensor& scores, std::size_t k, double epsilon, std::size_t iters) {
  if (scores.rank() == 1) {
    const std::size_t n = scores.dim(0);
    return ad::reshape(ad::sinkhorn_topk_rows(ad::reshape(scores, {1, n}), k, epsilon, iters), {n});
  }
  return ad::sinkhorn_topk_rows(scores, k, epsilon, iters);
}

FeaResult match_and_loss_fea(const Tensor& f_a, const Tensor& f_b, const ViewRegions& a, const ViewRegions& b,
                             const LossConfig& cfg, CounterRng rng) {
  cfg.validate();
  if (a.selected.size() != b.selected.size()) throw ArgumentError("views disagree on the selection");
  if (f_a.rank() != 2 || f_b.rank() != 2 || f_a.dim(1) != f_b.dim(1)) throw ShapeError("feature maps differ");
  FeaResult result;
  std::vector<Tensor> parts;
  const Tensor feats[2] = {ad::l2_normalize_rows(f_a), ad::l2_normalize_rows(f_b)};
  const ViewRegions* regions[2] = {&a, &b};
  for (int dir = 0; dir < 2; ++dir) {
    const ViewRegions& anchor_view = *regions[dir];
    const ViewRegions& key_view = *regions[1 - dir];
    const Tensor& key_rows = feats[1 - dir];
    const std::size_t n_keys = key_rows.dim(0);
    if (cfg.k >= n_keys) throw ArgumentError("k must be smaller than the number of key rows");
    std::vector<std::vector<std::size_t>> anchor_sets;
    std::vector<std::size_t> neg_index;
    for (std::size_t s = 0; s < anchor_view.selected.size(); ++s) {
      if (anchor_view.selected[s].empty() || key_view.background.empty()) {
        ++result.skipped;
        continue;
      }
      const CounterRng slot_rng = rng.derive(static_cast<std::uint64_t>(dir)).derive(s);
      AnchorDraw draw{dir, s, {}, draw_from_pool(key_view.background, cfg.k, slot_rng.derive(1), &result.resampled)};
      neg_index.insert(neg_index.end(), draw.negatives.begin(), draw.negatives.end());
      anchor_sets.push_back(anchor_view.selected[s]);
      result.draws.push_back(std::move(draw));
    }
    if (anchor_sets.empty()) continue;
    const Tensor anchors = regional_means(feats[dir], anchor_sets);
    const Tensor sim = ad::matmul(anchors, ad::transpose(key_rows));
    const Tensor weights = ad::scale(ad::sinkhorn_topk_rows(sim, cfg.k, cfg.sinkhorn_epsilon, cfg.sinkhorn_iters),
                                     1.0 / static_cast<double>(cfg.k));
    const Tensor neg = ad::scale(blocked_dots(anchors, ad::gather_rows(key_rows, neg_index), cfg.k), 1.0 / cfg.tau);
    parts.push_back(info_nce_from_logits(ad::scale(sim, 1.0 / cfg.tau), neg, &weights));
  }
  if (parts.empty()) throw ContractError("no anchor had background negatives in the feature loss");
  result.loss = mean_of(parts);
  return result;
}

Tensor loss_sum(const Tensor& l_geo, const Tensor& l_fea, double alpha, double beta) {
  return ad::add(ad::scale(l_geo, alpha), ad::scale(l_fea, beta));
}

}  // namespace fac
