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

#include "fac/spatial.hpp"

#include "fac/error.hpp"

#include <algorithm>
#include <limits>
#include <queue>
#include <utility>

namespace fac {

namespace {
constexpr std::size_t kLeafSize = 12;

using Candidate = std::pair<double, std::size_t>;  // (squared distance, index); max-heap order
}  // namespace

KnnIndex::KnnIndex(std::span<const Vec3> points) : points_(points), order_(points.size()) {
  for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = i;
  nodes_.reserve(2 * (points.size() / kLeafSize + 1));
  if (!points.empty()) build(0, points.size());
}

std::size_t KnnIndex::build(std::size_t begin, std::size_t end) {
  const std::size_t id = nodes_.size();
  nodes_.push_back({begin, end, -1, 0.0, 0, 0});
  if (end - begin <= kLeafSize) return id;

  Vec3 lo = points_[order_[begin]];
  Vec3 hi = lo;
  for (std::size_t i = begin; i < end; ++i) {
    lo = lo.cwiseMin(points_[order_[i]]);
    hi = hi.cwiseMax(points_[order_[i]]);
  }
  Eigen::Index axis = 0;
  (hi - lo).maxCoeff(&axis);
  if (hi[axis] <= lo[axis]) return id;  // all points identical

  const std::size_t mid = begin + (end - begin) / 2;
  auto less = [&](std::size_t a, std::size_t b) {
    const double pa = points_[a][axis];
    const double pb = points_[b][axis];
    return pa < pb || (pa == pb && a < b);
  };
  std::nth_element(order_.begin() + static_cast<std::ptrdiff_t>(begin),
                   order_.begin() + static_cast<std::ptrdiff_t>(mid),
                   order_.begin() + static_cast<std::ptrdiff_t>(end), less);
  const double split = points_[order_[mid]][axis];
  const std::size_t left = build(begin, mid);
  const std::size_t right = build(mid, end);
  nodes_[id].axis = static_cast<int>(axis);
  nodes_[id].split = split;
  nodes_[id].left = left;
  nodes_[id].right = right;
  return id;
}

std::vector<std::size_t> KnnIndex::nearest(const Vec3& query, std::size_t k) const {
  k = std::min(k, points_.size());
  std::vector<std::size_t> out;
  if (k == 0) return out;

  std::priority_queue<Candidate> heap;
  auto consider = [&](std::size_t idx) {
    const Candidate c{(points_[idx] - query).squaredNorm(), idx};
    if (heap.size() < k) {
      heap.push(c);
    } else if (c < heap.top()) {
      heap.pop();
      heap.push(c);
    }
  };
  auto worst = [&] {
    return heap.size() < k ? std::numeric_limits<double>::infinity() : heap.top().first;
  };

  // Iterative depth-first descent, near child first.
  std::vector<std::pair<std::size_t, double>> stack{{0, 0.0}};
  while (!stack.empty()) {
    const auto [id, bound] = stack.back();
    stack.pop_back();
    if (bound > worst()) continue;
    const Node& n = nodes_[id];
    if (n.axis < 0) {
      for (std::size_t i = n.begin; i < n.end; ++i) consider(order_[i]);
      continue;
    }
    const double diff = query[n.axis] - n.split;
    const std::size_t near = diff < 0.0 ? n.left : n.right;
    const std::size_t far = diff < 0.0 ? n.right : n.left;
    // Points equal to the split value can sit on either side, hence the
    // inclusive bound on the far child.
    stack.push_back({far, diff * diff});
    stack.push_back({near, 0.0});
  }

  out.resize(heap.size());
  for (std::size_t i = heap.size(); i-- > 0;) {
    out[i] = heap.top().second;
    heap.pop();
  }
  return out;
}

std::vector<std::size_t> KnnIndex::all_nearest(std::size_t k) const {
  if (k > points_.size()) throw ArgumentError("k exceeds the number of points");
  std::vector<std::size_t> table(points_.size() * k);
  for (std::size_t i = 0; i < points_.size(); ++i) {
    std::vector<std::size_t> nn = nearest(points_[i], k);
    // A duplicate point with a smaller index may outrank i; keep self first.
    auto self = std::find(nn.begin(), nn.end(), i);
    if (self == nn.end()) {
      nn.back() = i;
      self = nn.end() - 1;
    }
    std::rotate(nn.begin(), self, self + 1);
    std::copy(nn.begin(), nn.end(), table.begin() + static_cast<std::ptrdiff_t>(i * k));
  }
  return table;
}

}  // namespace fac
