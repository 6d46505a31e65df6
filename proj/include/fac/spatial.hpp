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

#include <cstddef>
#include <span>
#include <vector>

namespace fac {

/// Static kd-tree over a borrowed point array; the points must outlive it.
/// Neighbors are ordered by (squared distance, index), so results are
/// deterministic even with duplicate points.
class KnnIndex {
 public:
  explicit KnnIndex(std::span<const Vec3> points);

  /// The k nearest stored points to `query`, the query itself included when
  /// it is stored. Returns min(k, size()) indices.
  [[nodiscard]] std::vector<std::size_t> nearest(const Vec3& query, std::size_t k) const;

  /// Row-major N x k table of each stored point's k nearest neighbors
  /// (self first). Requires k <= size().
  [[nodiscard]] std::vector<std::size_t> all_nearest(std::size_t k) const;

  [[nodiscard]] std::size_t size() const noexcept { return points_.size(); }

 private:
  struct Node {
    std::size_t begin, end;  // range into order_
    int axis;                // -1 for leaves
    double split;
    std::size_t left, right;
  };
  std::size_t build(std::size_t begin, std::size_t end);

  std::span<const Vec3> points_;
  std::vector<std::size_t> order_;
  std::vector<Node> nodes_;
};

}  // namespace fac
