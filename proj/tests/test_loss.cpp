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

#include "doctest.h"

#include "fac/error.hpp"
#include "fac/loss.hpp"
#include "oracles.hpp"

#include <cmath>
#include <map>

using namespace fac;
using namespace fac::ad;

namespace {

Tensor matrix(const oracle::Rows& rows) { return Tensor::constant({rows.size(), rows[0].size()}, oracle::flatten(rows)); }

oracle::Rows unit_rows(CounterRng& rng, std::size_t n, std::size_t c) {
  return oracle::normalized_rows(oracle::random_rows(rng, n, c));
}

oracle::Row basis(std::size_t c, std::size_t i) {
  oracle::Row r(c, 0.0);
  r[i] = 1.0;
  return r;
}

oracle::Regions to_oracle(const ViewRegions& v) { return {v.selected, v.background}; }

std::vector<oracle::Draw> to_oracle(const std::vector<AnchorDraw>& draws) {
  std::vector<oracle::Draw> out;
  for (const auto& d : draws) out.push_back({d.direction, d.slot, d.positives, d.negatives});
  return out;
}

// Random region labels for n points over `regions` regions, every region
// present, with region ids >= `selected` as background.
ViewRegions random_view(CounterRng& rng, std::size_t n, std::size_t regions, std::size_t selected) {
  std::vector<std::uint32_t> region_of(n);
  for (std::size_t i = 0; i < n; ++i) region_of[i] = static_cast<std::uint32_t>(i < regions ? i : rng.below(regions));
  rng.shuffle(std::span<std::uint32_t>(region_of));
  RegionSelection sel;
  for (std::uint32_t r = 0; r < selected; ++r) sel.region_ids.push_back(r);
  return view_regions(region_of, sel);
}

ContrastBatch batch_of(const oracle::Rows& anchors, const std::vector<oracle::Rows>& pos,
                       const std::vector<oracle::Rows>& neg) {
  oracle::Rows p, n;
  for (const auto& block : pos) p.insert(p.end(), block.begin(), block.end());
  for (const auto& block : neg) n.insert(n.end(), block.begin(), block.end());
  return {matrix(anchors), matrix(p), matrix(n), pos[0].size(), neg[0].size()};
}

}  // namespace

TEST_CASE("loss configuration") {
  CHECK(LossConfig{}.tau == 0.1);
  CHECK(LossConfig{}.total_pair_budget == 4096);
  CHECK(LossConfig::k_from_budget(4096, 20) == 51);
  CHECK(LossConfig::k_from_budget(4096, 20) == LossConfig{}.k);
  CHECK_THROWS_AS((void)LossConfig::k_from_budget(10, 20), ArgumentError);
  LossConfig bad;
  bad.tau = 0.0;
  CHECK_THROWS_AS(bad.validate(), ArgumentError);
  bad = LossConfig{};
  bad.beta = -1.0;
  CHECK_THROWS_AS(bad.validate(), ArgumentError);
}

TEST_CASE("regional mean") {
  const Tensor same = Tensor::constant({3, 2}, {3, 4, 3, 4, 3, 4});
  const std::vector<std::size_t> all{0, 1, 2};
  const Tensor m = regional_mean(same, all);
  CHECK(m.shape() == Shape{1, 2});
  CHECK(std::abs(m.at(0, 0) - 0.6) < 1e-15);
  CHECK(std::abs(m.at(0, 1) - 0.8) < 1e-15);

  const Tensor eye = Tensor::constant({2, 2}, {1, 0, 0, 1});
  const std::vector<std::size_t> both{0, 1};
  const Tensor d = regional_mean(eye, both);
  CHECK(std::abs(d.at(0, 0) - 1.0 / std::sqrt(2.0)) < 1e-15);
  CHECK(std::abs(d.at(0, 1) - 1.0 / std::sqrt(2.0)) < 1e-15);

  CounterRng rng(1);
  for (int trial = 0; trial < 50; ++trial) {
    const oracle::Rows rows = oracle::random_rows(rng, 30, 5);
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < 30; ++i) {
      if (rng.bernoulli(0.4)) idx.push_back(i);
    }
    if (idx.empty()) idx.push_back(3);
    const oracle::Row ref = oracle::normalized(oracle::mean_of(rows, idx));
    const Tensor got = regional_mean(matrix(rows), idx);
    for (std::size_t j = 0; j < 5; ++j) REQUIRE(std::abs(got.at(0, j) - ref[j]) < 1e-12);
  }
  CHECK_THROWS_AS((void)regional_mean(eye, std::vector<std::size_t>{}), ArgumentError);
  CHECK_THROWS_AS((void)regional_mean(eye, std::vector<std::size_t>{2}), ArgumentError);
}

TEST_CASE("InfoNCE examples") {
  const oracle::Row e = basis(3, 0);
  const double equal = info_nce(batch_of({e}, {{e}}, {{e, e, e}}), 0.1).item();
  CHECK(std::abs(equal - std::log(4.0)) < 1e-12);

  const oracle::Row minus{-1.0, 0.0, 0.0};
  const double saturated = info_nce(batch_of({e}, {{e}}, {{minus, minus, minus}}), 0.1).item();
  CHECK(std::abs(saturated - std::log1p(3.0 * std::exp(-20.0))) < 1e-15);
  CHECK(saturated < 1e-8);

  CHECK_THROWS_AS((void)info_nce(batch_of({e}, {{e}}, {{e}}), 0.0), ArgumentError);
  CHECK_THROWS_AS((void)info_nce(ContrastBatch{matrix({e}), matrix({e}), matrix({e, e}), 2, 1}, 0.1), ShapeError);
}

TEST_CASE("InfoNCE matches direct exponentiation") {
  CounterRng rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    const oracle::Rows anchors = unit_rows(rng, 5, 6);
    std::vector<oracle::Rows> pos, neg;
    for (int a = 0; a < 5; ++a) {
      pos.push_back(unit_rows(rng, 7, 6));
      neg.push_back(unit_rows(rng, 7, 6));
    }
    const double tau = rng.uniform(0.1, 1.0);
    const double got = info_nce(batch_of(anchors, pos, neg), tau).item();
    CHECK(std::abs(got - oracle::info_nce(anchors, pos, neg, tau)) < 1e-10);
    CHECK(got >= 0.0);
  }
}

TEST_CASE("InfoNCE is non-negative and uniform similarities give ln(1 + K)") {
  CounterRng rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t kp = 1 + rng.below(5), kn = 1 + rng.below(9);
    const oracle::Rows anchors = unit_rows(rng, 3, 4);
    std::vector<oracle::Rows> pos(3), neg(3), same_pos(3), same_neg(3);
    for (int a = 0; a < 3; ++a) {
      pos[a] = unit_rows(rng, kp, 4);
      neg[a] = unit_rows(rng, kn, 4);
      same_pos[a] = oracle::Rows(kp, anchors[a]);
      same_neg[a] = oracle::Rows(kn, anchors[a]);
    }
    REQUIRE(info_nce(batch_of(anchors, pos, neg), 0.05).item() >= 0.0);
    const double uniform = info_nce(batch_of(anchors, same_pos, same_neg), 0.1).item();
    REQUIRE(std::abs(uniform - std::log(1.0 + static_cast<double>(kn))) < 1e-12);
  }
}

TEST_CASE("InfoNCE increases with temperature on a separated batch") {
  CounterRng rng(4);
  // Positives within 0.3 rad of the anchor, negatives 0.6 to 1.0 rad away, so
  // the loss stays representable down to tau = 0.01.
  const oracle::Row a{1.0, 0.0};
  oracle::Rows pos, neg;
  for (int i = 0; i < 5; ++i) {
    const double tp = rng.uniform(-0.3, 0.3), tn = rng.uniform(0.6, 1.0) * (rng.bernoulli(0.5) ? 1 : -1);
    pos.push_back({std::cos(tp), std::sin(tp)});
    neg.push_back({std::cos(tn), std::sin(tn)});
  }
  const ContrastBatch batch = batch_of({a}, {pos}, {neg});
  double prev = -1.0;
  for (double tau = 0.01; tau <= 1.0 + 1e-12; tau += 0.01) {
    const double v = info_nce(batch, tau).item();
    REQUIRE(v > prev);
    prev = v;
  }
}

TEST_CASE("view regions and pool draws") {
  RegionSelection sel;
  sel.region_ids = {4, 1};
  const std::vector<std::uint32_t> region_of{1, 4, 0, 4, 2, 1};
  const ViewRegions v = view_regions(region_of, sel);
  CHECK(v.selected == std::vector<std::vector<std::size_t>>{{1, 3}, {0, 5}});
  CHECK(v.background == std::vector<std::size_t>{2, 4});
  sel.region_ids = {1, 1};
  CHECK_THROWS_AS((void)view_regions(region_of, sel), ArgumentError);

  CounterRng rng(5);
  const std::vector<std::size_t> pool{10, 20, 30, 40, 50, 60};
  bool flag = false;
  const auto d = draw_from_pool(pool, 4, rng, &flag);
  CHECK_FALSE(flag);
  CHECK(std::set<std::size_t>(d.begin(), d.end()).size() == 4);
  for (auto x : d) CHECK(std::find(pool.begin(), pool.end(), x) != pool.end());
  CHECK(draw_from_pool(pool, 4, rng, nullptr) == d);

  const auto many = draw_from_pool(pool, 15, rng, &flag);
  CHECK(flag);
  REQUIRE(many.size() == 15);
  std::map<std::size_t, int> hist;
  for (auto x : many) ++hist[x];
  for (auto x : pool) CHECK(hist[x] >= 2);
  CHECK_THROWS_AS((void)draw_from_pool(std::vector<std::size_t>{}, 1, rng), ArgumentError);
}

TEST_CASE("geometry loss on orthogonal bundles") {
  // Regions 0 and 1 carry e1 and e2 in both views.
  const std::size_t k = 3;
  oracle::Rows rows;
  for (int i = 0; i < 5; ++i) rows.push_back(basis(3, 0));
  for (int i = 0; i < 5; ++i) rows.push_back(basis(3, 1));
  ViewRegions v;
  v.selected = {{0, 1, 2, 3, 4}, {5, 6, 7, 8, 9}};
  LossConfig cfg;
  cfg.k = k;
  const GeoResult r = loss_geo(matrix(rows), matrix(rows), v, v, cfg, CounterRng(6));
  CHECK(std::abs(r.loss.item() - std::log1p(k * std::exp(-10.0))) < 1e-12);
  CHECK(r.skipped == 0);
  CHECK(r.draws.size() == 4);
  CHECK_FALSE(r.resampled);

  ViewRegions single;
  single.selected = {{0, 1, 2, 3, 4, 5, 6, 7, 8, 9}};
  CHECK_THROWS_AS((void)loss_geo(matrix(rows), matrix(rows), single, single, cfg, CounterRng(6)), ContractError);

  // An empty slot in one view is skipped from both sides.
  ViewRegions gap = v;
  gap.selected.push_back({});
  ViewRegions full = v;
  full.selected.push_back({9});
  const GeoResult s = loss_geo(matrix(rows), matrix(rows), full, gap, cfg, CounterRng(6));
  CHECK(s.skipped == 2);
}

TEST_CASE("geometry loss matches the scripted oracle") {
  CounterRng rng(7);
  LossConfig cfg;
  cfg.k = 2;
  {
    // Two regions with four points each.
    const oracle::Rows da = oracle::random_rows(rng, 8, 3), db = oracle::random_rows(rng, 8, 3);
    ViewRegions a, b;
    a.selected = {{0, 1, 2, 3}, {4, 5, 6, 7}};
    b.selected = {{0, 2, 4, 6}, {1, 3, 5, 7}};
    const GeoResult r = loss_geo(matrix(da), matrix(db), a, b, cfg, rng.derive(0));
    CHECK(std::abs(r.loss.item() - oracle::geo_loss(da, db, to_oracle(a), to_oracle(b), to_oracle(r.draws), cfg.tau)) <
          1e-10);
  }
  for (int trial = 0; trial < 40; ++trial) {
    const std::size_t n = 30 + rng.below(30);
    const ViewRegions a = random_view(rng, n, 8, 2 + rng.below(5));
    ViewRegions b = random_view(rng, n, 8, a.selected.size());
    cfg.k = 1 + rng.below(6);
    const oracle::Rows da = oracle::random_rows(rng, n, 4), db = oracle::random_rows(rng, n, 4);
    const GeoResult r = loss_geo(matrix(da), matrix(db), a, b, cfg, rng.derive(1));
    REQUIRE(std::abs(r.loss.item() -
                     oracle::geo_loss(da, db, to_oracle(a), to_oracle(b), to_oracle(r.draws), cfg.tau)) < 1e-10);
    // Positives come from the matching region, negatives from the others.
    for (const auto& d : r.draws) {
      const ViewRegions& key = d.direction == 0 ? b : a;
      const auto& own = key.selected[d.slot];
      REQUIRE(d.positives.size() == cfg.k);
      REQUIRE(d.negatives.size() == cfg.k);
      for (auto i : d.positives) REQUIRE(std::find(own.begin(), own.end(), i) != own.end());
      for (auto i : d.negatives) REQUIRE(std::find(own.begin(), own.end(), i) == own.end());
    }
    const GeoResult again = loss_geo(matrix(da), matrix(db), a, b, cfg, rng.derive(1));
    REQUIRE(again.loss.item() == r.loss.item());
  }
}

TEST_CASE("soft top-k of a score vector") {
  const Tensor w = soft_topk(Tensor::constant({3}, {10.0, 0.0, -10.0}), 1, 1e-3, 50);
  CHECK(w.shape() == Shape{3});
  CHECK(std::abs(w.values()[0] - 1.0) < 1e-3);
  CHECK(std::abs(w.values()[1]) < 1e-3);
  CHECK(std::abs(w.values()[2]) < 1e-3);
  const Tensor u = soft_topk(Tensor::constant({4}, std::vector<double>(4, -0.2)), 1, 0.05, 50);
  for (double v : u.values()) CHECK(std::abs(v - 0.25) < 1e-9);
  CounterRng rng(8);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> s(12);
    for (auto& x : s) x = rng.uniform(-1, 1);
    const Tensor t = soft_topk(Tensor::constant({12}, s), 4, 0.05, 50);
    double total = 0.0;
    for (std::size_t i = 0; i < 12; ++i) {
      total += t.values()[i];
      for (std::size_t j = 0; j < 12; ++j) {
        if (s[i] > s[j]) REQUIRE(t.values()[i] >= t.values()[j] - 1e-9);
      }
    }
    CHECK(std::abs(total - 4.0) < 1e-6);
  }
  CHECK_THROWS_AS((void)soft_topk(Tensor::constant({3}, {1, 2, 3}), 3, 0.1, 10), ArgumentError);
}

TEST_CASE("feature loss closed forms") {
  LossConfig cfg;
  cfg.k = 1;
  cfg.sinkhorn_epsilon = 1e-4;
  {
    // One copy of the anchor direction, every other row orthogonal to it.
    const oracle::Rows rows{basis(3, 0), basis(3, 1), basis(3, 2), basis(3, 1), basis(3, 2), basis(3, 1)};
    ViewRegions v;
    v.selected = {{0}};
    v.background = {1, 2, 3, 4, 5};
    const FeaResult r = match_and_loss_fea(matrix(rows), matrix(rows), v, v, cfg, CounterRng(9));
    CHECK(std::abs(r.loss.item() - std::log1p(std::exp(-10.0))) < 1e-3);
    CHECK(r.skipped == 0);
  }
  {
    // Anchors orthogonal to every key row.
    cfg.k = 3;
    cfg.sinkhorn_epsilon = 0.05;
    oracle::Rows ra, rb;
    for (int i = 0; i < 4; ++i) {
      ra.push_back(basis(3, 0));
      rb.push_back(basis(3, 1));
    }
    for (int i = 0; i < 6; ++i) {
      ra.push_back(basis(3, 2));
      rb.push_back(basis(3, 2));
    }
    ViewRegions v;
    v.selected = {{0, 1, 2, 3}};
    v.background = {4, 5, 6, 7, 8, 9};
    const FeaResult r = match_and_loss_fea(matrix(ra), matrix(rb), v, v, cfg, CounterRng(10));
    CHECK(std::abs(r.loss.item() - std::log(1.0 + 3.0)) < 1e-12);
  }
  {
    cfg.k = 1;
    ViewRegions v;
    v.selected = {{0, 1}};
    const oracle::Rows rows{basis(2, 0), basis(2, 1), basis(2, 0)};
    CHECK_THROWS_AS((void)match_and_loss_fea(matrix(rows), matrix(rows), v, v, cfg, CounterRng(1)), ContractError);
  }
  {
    // A background pool smaller than k is reused and flagged.
    cfg.k = 4;
    CounterRng rng(11);
    const oracle::Rows rows = oracle::random_rows(rng, 10, 3);
    ViewRegions v;
    v.selected = {{0, 1, 2, 3, 4, 5, 6, 7}};
    v.background = {8, 9};
    const FeaResult r = match_and_loss_fea(matrix(rows), matrix(rows), v, v, cfg, CounterRng(1));
    CHECK(r.resampled);
    CHECK(r.draws[0].negatives.size() == 4);
  }
}

TEST_CASE("feature loss at small epsilon matches the hard top-k oracle") {
  CounterRng rng(12);
  LossConfig cfg;
  cfg.k = 2;
  cfg.sinkhorn_epsilon = 1e-4;
  int checked = 0;
  while (checked < 30) {
    const ViewRegions a = random_view(rng, 8, 4, 2);
    const ViewRegions b = random_view(rng, 8, 4, 2);
    const oracle::Rows fa = oracle::random_rows(rng, 8, 3), fb = oracle::random_rows(rng, 8, 3);
    // Keep instances whose k-th and (k+1)-th similarities are separated.
    bool separated = true;
    const oracle::Rows na = oracle::normalized_rows(fa), nb = oracle::normalized_rows(fb);
    for (int dir = 0; dir < 2; ++dir) {
      const auto& anchors_view = dir == 0 ? a : b;
      const auto& anchor_rows = dir == 0 ? na : nb;
      const auto& key_rows = dir == 0 ? nb : na;
      for (const auto& region : anchors_view.selected) {
        const oracle::Row anchor = oracle::normalized(oracle::mean_of(anchor_rows, region));
        std::vector<double> sim;
        for (const auto& key : key_rows) sim.push_back(oracle::dot(anchor, key));
        separated = separated && oracle::topk_gap(sim, cfg.k) > 0.01;
      }
    }
    if (!separated) continue;
    const FeaResult r = match_and_loss_fea(matrix(fa), matrix(fb), a, b, cfg, rng.derive(3));
    const double ref =
        oracle::fea_loss_hard(fa, fb, to_oracle(a), to_oracle(b), to_oracle(r.draws), cfg.k, cfg.tau);
    REQUIRE(std::abs(r.loss.item() - ref) < 1e-6);
    for (const auto& d : r.draws) {
      const auto& pool = d.direction == 0 ? b.background : a.background;
      for (auto i : d.negatives) REQUIRE(std::find(pool.begin(), pool.end(), i) != pool.end());
    }
    ++checked;
  }
}

TEST_CASE("loss gradients agree with central differences") {
  CounterRng rng(13);
  LossConfig cfg;
  cfg.k = 3;
  for (int trial = 0; trial < 5; ++trial) {
    const ViewRegions a = random_view(rng, 20, 6, 3);
    const ViewRegions b = random_view(rng, 20, 6, 3);
    const Tensor da = matrix(oracle::random_rows(rng, 20, 4));
    const Tensor db = matrix(oracle::random_rows(rng, 20, 4));
    const CounterRng draw_rng = rng.derive(static_cast<std::uint64_t>(trial));
    auto geo = [&](const Tensor& x) { return loss_geo(x, db, a, b, cfg, draw_rng).loss; };
    auto fea = [&](const Tensor& x) { return match_and_loss_fea(x, db, a, b, cfg, draw_rng).loss; };
    auto both = [&](const Tensor& x) {
      return loss_sum(loss_geo(x, db, a, b, cfg, draw_rng).loss, match_and_loss_fea(x, db, a, b, cfg, draw_rng).loss,
                      1.0, 1.0);
    };
    CHECK(finite_diff_check(geo, da).max_rel_err < 1e-4);
    CHECK(finite_diff_check(fea, da).max_rel_err < 1e-4);
    const FiniteDiffReport rs = finite_diff_check(both, da);
    CHECK(rs.max_rel_err < 1e-4);
    const FiniteDiffReport rg = finite_diff_check(geo, da);
    const FiniteDiffReport rf = finite_diff_check(fea, da);
    for (std::size_t i = 0; i < rs.analytic.size(); ++i) {
      REQUIRE(std::abs(rs.analytic[i] - (rg.analytic[i] + rf.analytic[i])) < 1e-10);
    }
  }
}

TEST_CASE("joint loss") {
  CHECK(loss_sum(Tensor::scalar(0.5), Tensor::scalar(0.25), 1.0, 1.0).item() == 0.75);
  CounterRng rng(14);
  for (int trial = 0; trial < 100; ++trial) {
    const double g = rng.uniform(0, 5), f = rng.uniform(0, 5), al = rng.uniform(0, 2), be = rng.uniform(0, 2);
    REQUIRE(loss_sum(Tensor::scalar(g), Tensor::scalar(f), al, be).item() == al * g + be * f);
    REQUIRE(loss_sum(Tensor::scalar(g), Tensor::scalar(f), al, 0.0).item() == al * g);
  }
  // Gradient is the weighted sum of component gradients.
  const Tensor x = Tensor::parameter({3}, {0.1, -0.4, 0.8});
  const Tensor lg = sum(exp(x));
  const Tensor lf = sum(mul(x, x));
  const auto gs = backward(loss_sum(lg, lf, 0.3, 1.7)).of(x);
  const auto gg = backward(lg).of(x);
  const auto gf = backward(lf).of(x);
  for (std::size_t i = 0; i < 3; ++i) CHECK(gs[i] == doctest::Approx(0.3 * gg[i] + 1.7 * gf[i]).epsilon(1e-15));
}
