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

#include "fac/gradcheck.hpp"

#include "fac/loss.hpp"
#include "fac/model.hpp"

#include <algorithm>
#include <cmath>

namespace fac {

using ad::FiniteDiffReport;
using ad::Tensor;

namespace {

std::vector<double> randn(CounterRng& r, std::size_t n, double scale = 1.0) {
  std::vector<double> v(n);
  for (double& x : v) x = scale * r.normal();
  return v;
}

// Entries pushed at least `gap` away from zero.
std::vector<double> off_zero(std::vector<double> v, double gap) {
  for (double& x : v) {
    if (std::abs(x) < gap) x = x < 0.0 ? x - gap : x + gap;
  }
  return v;
}

Tensor rand_tensor(CounterRng& r, ad::Shape shape, double scale = 1.0) {
  const std::size_t n = ad::numel_of(shape);
  return Tensor::constant(std::move(shape), randn(r, n, scale));
}

// A fixed random linear functional of y, so that every output entry matters.
Tensor dot_random(const Tensor& y, std::uint64_t seed) {
  CounterRng r(seed);
  return ad::sum(ad::mul(y, rand_tensor(r, y.shape())));
}

using Body = std::function<Tensor(const Tensor&)>;

FiniteDiffReport check(const Body& f, ad::Shape shape, std::vector<double> x) {
  return ad::finite_diff_check(f, Tensor::constant(std::move(shape), std::move(x)));
}

// Unary primitive on a [3, 4] input with a random readout.
GradCheck unary(std::string name, Tensor (*op)(const Tensor&), double lo_gap, bool positive, double threshold = 1e-6) {
  return {std::move(name), threshold, [op, lo_gap, positive](CounterRng r) {
            std::vector<double> x = off_zero(randn(r, 12), lo_gap);
            if (positive) {
              for (double& v : x) v = std::abs(v);
            }
            const std::uint64_t seed = r.next_u64();
            return check([op, seed](const Tensor& t) { return dot_random(op(t), seed); }, {3, 4}, std::move(x));
          }};
}

struct TinyRegions {
  std::size_t n_a = 12;
  std::size_t n_b = 12;
  ViewRegions a, b;
};

// Three selected regions of three points and a background of three points in
// each view, with randomly permuted point ids.
TinyRegions tiny_regions(CounterRng& r) {
  TinyRegions t;
  for (ViewRegions* v : {&t.a, &t.b}) {
    std::vector<std::size_t> ids(12);
    for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = i;
    r.shuffle(std::span<std::size_t>(ids));
    v->selected.assign(3, {});
    for (std::size_t s = 0; s < 3; ++s) {
      v->selected[s].assign(ids.begin() + static_cast<std::ptrdiff_t>(3 * s),
                            ids.begin() + static_cast<std::ptrdiff_t>(3 * s + 3));
      std::sort(v->selected[s].begin(), v->selected[s].end());
    }
    v->background.assign(ids.begin() + 9, ids.end());
    std::sort(v->background.begin(), v->background.end());
  }
  return t;
}

LossConfig tiny_loss() {
  LossConfig cfg;
  cfg.k = 2;
  cfg.tau = 0.1;
  cfg.sinkhorn_epsilon = 0.1;
  cfg.sinkhorn_iters = 50;
  return cfg;
}

std::vector<std::size_t> iota(std::size_t from, std::size_t to) {
  std::vector<std::size_t> v;
  for (std::size_t i = from; i < to; ++i) v.push_back(i);
  return v;
}

std::vector<GradCheck> build() {
  std::vector<GradCheck> c;

  c.push_back({"matmul", 1e-6, [](CounterRng r) {
                 const Tensor b = rand_tensor(r, {4, 5});
                 const std::uint64_t seed = r.next_u64();
                 return check([=](const Tensor& x) { return dot_random(ad::matmul(x, b), seed); }, {3, 4}, randn(r, 12));
               }});
  c.push_back({"matmul_right", 1e-6, [](CounterRng r) {
                 const Tensor a = rand_tensor(r, {3, 4});
                 const std::uint64_t seed = r.next_u64();
                 return check([=](const Tensor& x) { return dot_random(ad::matmul(a, x), seed); }, {4, 2}, randn(r, 8));
               }});
  c.push_back({"transpose", 1e-6, [](CounterRng r) {
                 const std::uint64_t seed = r.next_u64();
                 return check([=](const Tensor& x) { return dot_random(ad::transpose(x), seed); }, {3, 4}, randn(r, 12));
               }});
  c.push_back({"add", 1e-6, [](CounterRng r) {
                 const Tensor b = rand_tensor(r, {3, 4});
                 const std::uint64_t seed = r.next_u64();
                 return check([=](const Tensor& x) { return dot_random(ad::mul(ad::add(x, b), x), seed); }, {3, 4},
                              randn(r, 12));
               }});
  c.push_back({"add_row_broadcast", 1e-6, [](CounterRng r) {
                 const Tensor a = rand_tensor(r, {3, 4});
                 const std::uint64_t seed = r.next_u64();
                 return check([=](const Tensor& x) { return dot_random(ad::exp(ad::add(a, x)), seed); }, {1, 4},
                              randn(r, 4, 0.5));
               }});
  c.push_back({"add_col_broadcast", 1e-6, [](CounterRng r) {
                 const Tensor a = rand_tensor(r, {3, 4});
                 const std::uint64_t seed = r.next_u64();
                 return check([=](const Tensor& x) { return dot_random(ad::exp(ad::add(a, x)), seed); }, {3, 1},
                              randn(r, 3, 0.5));
               }});
  c.push_back({"sub", 1e-6, [](CounterRng r) {
                 const Tensor b = rand_tensor(r, {3, 4});
                 const std::uint64_t seed = r.next_u64();
                 return check(
                     [=](const Tensor& x) { return dot_random(ad::mul(ad::sub(b, x), ad::sub(x, ad::scale(b, 2.0))), seed); },
                     {3, 4}, randn(r, 12));
               }});
  c.push_back({"mul", 1e-6, [](CounterRng r) {
                 const Tensor b = rand_tensor(r, {3, 4});
                 const std::uint64_t seed = r.next_u64();
                 return check([=](const Tensor& x) { return dot_random(ad::mul(ad::mul(x, b), x), seed); }, {3, 4},
                              randn(r, 12));
               }});
  c.push_back({"mul_scalar_broadcast", 1e-6, [](CounterRng r) {
                 const Tensor a = rand_tensor(r, {3, 4});
                 const std::uint64_t seed = r.next_u64();
                 return check([=](const Tensor& x) { return dot_random(ad::mul(a, ad::mul(x, x)), seed); }, {},
                              randn(r, 1));
               }});
  c.push_back({"scale", 1e-6, [](CounterRng r) {
                 const double s = r.normal();
                 const std::uint64_t seed = r.next_u64();
                 return check([=](const Tensor& x) { return dot_random(ad::exp(ad::scale(x, s)), seed); }, {3, 4},
                              randn(r, 12, 0.5));
               }});
  c.push_back({"add_scalar", 1e-6, [](CounterRng r) {
                 const double s = r.normal();
                 const std::uint64_t seed = r.next_u64();
                 return check([=](const Tensor& x) { return dot_random(ad::exp(ad::add_scalar(x, s)), seed); }, {3, 4},
                              randn(r, 12, 0.5));
               }});
  c.push_back(unary("relu", &ad::relu, 1e-2, false));
  c.push_back(unary("exp", &ad::exp, 0.0, false));
  c.push_back(unary("log", &ad::log, 0.2, true));
  c.push_back(unary("sigmoid", &ad::sigmoid, 0.0, false));
  c.push_back(unary("reciprocal", &ad::reciprocal, 0.3, false));
  c.push_back({"sum", 1e-6, [](CounterRng r) {
                 return check([](const Tensor& x) { return ad::sum(ad::mul(x, x)); }, {3, 4}, randn(r, 12));
               }});
  c.push_back({"mean", 1e-6, [](CounterRng r) {
                 return check([](const Tensor& x) { return ad::mean(ad::exp(x)); }, {3, 4}, randn(r, 12));
               }});
  c.push_back({"sum_rows", 1e-6, [](CounterRng r) {
                 const std::uint64_t seed = r.next_u64();
                 return check([=](const Tensor& x) { return dot_random(ad::exp(ad::sum_rows(x)), seed); }, {3, 4},
                              randn(r, 12, 0.5));
               }});
  c.push_back({"gather_rows", 1e-6, [](CounterRng r) {
                 std::vector<std::size_t> idx(7);
                 for (auto& i : idx) i = static_cast<std::size_t>(r.below(4));
                 const std::uint64_t seed = r.next_u64();
                 return check([=](const Tensor& x) { return dot_random(ad::exp(ad::gather_rows(x, idx)), seed); },
                              {4, 3}, randn(r, 12, 0.5));
               }});
  c.push_back({"concat_rows", 1e-6, [](CounterRng r) {
                 const Tensor b = rand_tensor(r, {2, 3});
                 const std::uint64_t seed = r.next_u64();
                 return check([=](const Tensor& x) { return dot_random(ad::exp(ad::concat_rows({x, b, x})), seed); },
                              {3, 3}, randn(r, 9, 0.5));
               }});
  c.push_back({"concat_cols", 1e-6, [](CounterRng r) {
                 const Tensor b = rand_tensor(r, {3, 2});
                 const std::uint64_t seed = r.next_u64();
                 return check(
                     [=](const Tensor& x) {
                       return ad::add(dot_random(ad::exp(ad::concat_cols(x, b)), seed),
                                      dot_random(ad::exp(ad::concat_cols(b, x)), seed + 1));
                     },
                     {3, 4}, randn(r, 12, 0.5));
               }});
  c.push_back({"reshape", 1e-6, [](CounterRng r) {
                 const std::uint64_t seed = r.next_u64();
                 return check([=](const Tensor& x) { return dot_random(ad::exp(ad::reshape(x, {2, 2, 3})), seed); },
                              {3, 4}, randn(r, 12, 0.5));
               }});
  c.push_back({"l2_normalize_rows", 1e-6, [](CounterRng r) {
                 const std::uint64_t seed = r.next_u64();
                 return check([=](const Tensor& x) { return dot_random(ad::l2_normalize_rows(x), seed); }, {3, 4},
                              randn(r, 12));
               }});
  c.push_back({"logsumexp_rows", 1e-6, [](CounterRng r) {
                 const std::uint64_t seed = r.next_u64();
                 return check([=](const Tensor& x) { return dot_random(ad::logsumexp_rows(x), seed); }, {3, 4},
                              randn(r, 12, 3.0));
               }});
  c.push_back({"softmax_rows", 1e-6, [](CounterRng r) {
                 const std::uint64_t seed = r.next_u64();
                 return check([=](const Tensor& x) { return dot_random(ad::softmax_rows(x), seed); }, {3, 4},
                              randn(r, 12, 2.0));
               }});
  c.push_back({"cosine_similarity_rows", 1e-6, [](CounterRng r) {
                 const Tensor b = rand_tensor(r, {3, 4});
                 const std::uint64_t seed = r.next_u64();
                 return check(
                     [=](const Tensor& x) {
                       return ad::add(dot_random(ad::cosine_similarity_rows(x, b), seed),
                                      dot_random(ad::cosine_similarity_rows(x, ad::exp(x)), seed + 1));
                     },
                     {3, 4}, randn(r, 12));
               }});
  c.push_back({"group_mean_rows", 1e-6, [](CounterRng r) {
                 ad::RowGroups groups;
                 for (std::size_t g = 0; g < 3; ++g) {
                   std::vector<std::size_t> members(1 + r.below(4));
                   for (auto& m : members) m = static_cast<std::size_t>(r.below(5));
                   groups.add(members);
                 }
                 const std::uint64_t seed = r.next_u64();
                 return check([=](const Tensor& x) { return dot_random(ad::exp(ad::group_mean_rows(x, groups)), seed); },
                              {5, 3}, randn(r, 15, 0.5));
               }});
  c.push_back({"sinkhorn_topk_rows", 1e-6, [](CounterRng r) {
                 const std::size_t k = 1 + static_cast<std::size_t>(r.below(4));
                 const std::size_t iters = 1 + static_cast<std::size_t>(r.below(30));
                 const std::uint64_t seed = r.next_u64();
                 return check(
                     [=](const Tensor& x) { return dot_random(ad::sinkhorn_topk_rows(x, k, 0.1, iters), seed); }, {2, 6},
                     randn(r, 12, 0.3));
               }});
  c.push_back({"composition", 1e-6, [](CounterRng r) {
                 const Tensor w1 = rand_tensor(r, {4, 6}), w2 = rand_tensor(r, {6, 5}), w3 = rand_tensor(r, {5, 3});
                 const Tensor b1 = rand_tensor(r, {1, 6});
                 const std::uint64_t seed = r.next_u64();
                 return check(
                     [=](const Tensor& x) {
                       const Tensor h1 = ad::sigmoid(ad::add(ad::matmul(x, w1), b1));
                       const Tensor h2 = ad::exp(ad::scale(ad::matmul(h1, w2), 0.3));
                       return dot_random(ad::logsumexp_rows(ad::matmul(h2, w3)), seed);
                     },
                     {3, 4}, randn(r, 12));
               }});

  c.push_back({"info_nce", 1e-4, [](CounterRng r) {
                 const Tensor pos = rand_tensor(r, {3 * 2, 4}), neg = rand_tensor(r, {3 * 4, 4});
                 return check(
                     [=](const Tensor& x) {
                       return info_nce({ad::l2_normalize_rows(x), ad::l2_normalize_rows(pos), ad::l2_normalize_rows(neg), 2, 4},
                                       0.1);
                     },
                     {3, 4}, randn(r, 12));
               }});
  c.push_back({"loss_geo", 1e-4, [](CounterRng r) {
                 const TinyRegions t = tiny_regions(r);
                 const std::uint64_t seed = r.next_u64();
                 return check(
                     [=](const Tensor& x) {
                       const Tensor d_a = ad::gather_rows(x, iota(0, t.n_a));
                       const Tensor d_b = ad::gather_rows(x, iota(t.n_a, t.n_a + t.n_b));
                       return loss_geo(d_a, d_b, t.a, t.b, tiny_loss(), CounterRng(seed)).loss;
                     },
                     {t.n_a + t.n_b, 4}, randn(r, (t.n_a + t.n_b) * 4));
               }});
  c.push_back({"loss_fea", 1e-4, [](CounterRng r) {
                 const TinyRegions t = tiny_regions(r);
                 const std::uint64_t seed = r.next_u64();
                 return check(
                     [=](const Tensor& x) {
                       const Tensor f_a = ad::gather_rows(x, iota(0, t.n_a));
                       const Tensor f_b = ad::gather_rows(x, iota(t.n_a, t.n_a + t.n_b));
                       return match_and_loss_fea(f_a, f_b, t.a, t.b, tiny_loss(), CounterRng(seed)).loss;
                     },
                     {t.n_a + t.n_b, 4}, randn(r, (t.n_a + t.n_b) * 4));
               }});
  c.push_back({"loss_sum", 1e-4, [](CounterRng r) {
                 const TinyRegions t = tiny_regions(r);
                 const std::uint64_t seed = r.next_u64();
                 const double alpha = r.uniform(0.1, 2.0), beta = r.uniform(0.1, 2.0);
                 return check(
                     [=](const Tensor& x) {
                       const Tensor d_a = ad::gather_rows(x, iota(0, t.n_a));
                       const Tensor d_b = ad::gather_rows(x, iota(t.n_a, t.n_a + t.n_b));
                       const LossConfig cfg = tiny_loss();
                       return loss_sum(loss_geo(d_a, d_b, t.a, t.b, cfg, CounterRng(seed)).loss,
                                       match_and_loss_fea(d_a, d_b, t.a, t.b, cfg, CounterRng(seed + 1)).loss, alpha, beta);
                     },
                     {t.n_a + t.n_b, 4}, randn(r, (t.n_a + t.n_b) * 4));
               }});
  c.push_back({"backbone", 1e-4, [](CounterRng r) {
                 ModelConfig cfg;
                 cfg.f_c = 4;
                 cfg.backbone_hidden = {6};
                 cfg.knn_k = 4;
                 cfg.seed = r.next_u64();
                 const BackboneParams p = init_backbone(cfg);
                 std::vector<Vec3> pts(12);
                 for (auto& q : pts) q = Vec3(r.normal(), r.normal(), r.normal());
                 const PointCloud cloud(pts);
                 const std::uint64_t seed = r.next_u64();
                 const auto w0 = p.mlp[0].weight.values();
                 return check(
                     [=](const Tensor& x) {
                       BackboneParams q = p;
                       q.mlp[0].weight = x;
                       return dot_random(backbone_forward(q, cloud, cfg.knn_k).values, seed);
                     },
                     p.mlp[0].weight.shape(), std::vector<double>(w0.begin(), w0.end()));
               }});
  c.push_back({"scn_projector", 1e-4, [](CounterRng r) {
                 ModelConfig cfg;
                 cfg.f_c = 3;
                 cfg.seed = r.next_u64();
                 const ProjectorParams p = init_projector(cfg);
                 std::vector<std::size_t> order(8);
                 for (std::size_t i = 0; i < 8; ++i) order[i] = 7 - i;
                 const FeatureMap e_a{Layout::kGrid, rand_tensor(r, {2, 4, 3}), order, 2};
                 const FeatureMap e_b{Layout::kGrid, rand_tensor(r, {2, 4, 3}), order, 2};
                 const std::uint64_t seed = r.next_u64();
                 const auto w0 = p.first.weight.values();
                 return check(
                     [=](const Tensor& x) {
                       ProjectorParams q = p;
                       q.first.weight = x;
                       const ScnOutput out = scn_forward(q, e_a, e_b);
                       return ad::add(dot_random(out.f_a.values, seed), dot_random(out.f_b.values, seed + 1));
                     },
                     p.first.weight.shape(), std::vector<double>(w0.begin(), w0.end()));
               }});
  return c;
}

}  // namespace

const std::vector<GradCheck>& registered_gradchecks() {
  static const std::vector<GradCheck> checks = build();
  return checks;
}

std::vector<GradCheckOutcome> run_gradchecks(std::size_t instances, std::uint64_t seed, const std::string& filter) {
  std::vector<GradCheckOutcome> out;
  const CounterRng root(seed);
  for (std::size_t c = 0; c < registered_gradchecks().size(); ++c) {
    const GradCheck& g = registered_gradchecks()[c];
    if (!filter.empty() && g.name.find(filter) == std::string::npos) continue;
    GradCheckOutcome o{g.name, 0.0, g.threshold, instances, true};
    for (std::size_t i = 0; i < instances; ++i) {
      const FiniteDiffReport rep = g.run(root.derive(c).derive(i));
      if (!(rep.max_rel_err <= o.worst_rel_err)) o.worst_rel_err = rep.max_rel_err;
    }
    o.passed = o.worst_rel_err < g.threshold;
    out.push_back(o);
  }
  return out;
}

}  // namespace fac
