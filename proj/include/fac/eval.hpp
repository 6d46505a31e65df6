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

#include "fac/model.hpp"
#include "fac/scene.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace fac {

/// Row-major embedding matrix, one row per point.
using Embeddings = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct VarianceReport {
  double sigma2_intra = 0.0;
  double sigma2_inter = 0.0;
  /// inter / intra; +inf when only intra is 0, NaN when both are.
  double ratio = 0.0;
  bool degenerate = false;
  bool infinite = false;
};

/// intra: mean over classes of the mean squared distance to the class
/// centroid. inter: mean squared distance over unordered centroid pairs.
/// Throws ArgumentError with fewer than two classes or mismatched lengths.
[[nodiscard]] VarianceReport class_variance(const Embeddings& x, std::span<const std::uint32_t> labels);

/// Cosine similarity of every row with row `query`; zero rows give 0.
[[nodiscard]] std::vector<double> correlation_map(const Embeddings& x, std::size_t query);
/// One value per line, 17 significant digits.
void write_correlation(std::span<const double> values, const std::filesystem::path& path);

struct ProbeSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

/// Per class, floor(0.8 n) (at least 1, at most n - 1) randomly chosen
/// samples train and the rest test. Throws ArgumentError when a class has
/// fewer than 2 samples or fewer than two classes are present.
[[nodiscard]] ProbeSplit stratified_split(std::span<const std::uint32_t> labels, std::uint64_t seed);

struct ProbeConfig {
  std::size_t epochs = 300;
  double learning_rate = 0.5;
  double l2 = 1e-4;
};

struct ProbeResult {
  double accuracy = 0.0;
  std::size_t n_train = 0;
  std::size_t n_test = 0;
};

/// Multinomial logistic regression on z-scored features (train statistics),
/// fit by full-batch gradient descent from zero weights, scored on the
/// held-out part of the split.
[[nodiscard]] ProbeResult linear_probe(const Embeddings& x, std::span<const std::uint32_t> labels,
                                       std::uint64_t split_seed, const ProbeConfig& cfg = {});
[[nodiscard]] ProbeResult linear_probe(const Embeddings& x, std::span<const std::uint32_t> labels,
                                       const ProbeSplit& split, const ProbeConfig& cfg = {});

/// Online backbone features of a cloud.
[[nodiscard]] Embeddings embed(const Model& model, const PointCloud& cloud);

/// Embeddings of all clouds stacked, with foreground labels (1 for label > 0).
struct LabeledEmbeddings {
  Embeddings x;
  std::vector<std::uint32_t> labels;
};

/// Throws DataError when a cloud carries no labels.
[[nodiscard]] LabeledEmbeddings embed_foreground(const Model& model, std::span<const PointCloud> clouds);

[[nodiscard]] std::string format_variance(const VarianceReport& r);
[[nodiscard]] std::string format_probe(const ProbeResult& r);

}  // namespace fac
