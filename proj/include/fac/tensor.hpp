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

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

/// Dense row-major f64 tensors with reverse-mode differentiation.
///
/// A Tensor is a handle to an immutable graph node. Operations on tensors
/// record their inputs and a backward rule only when some input requires a
/// gradient, so graphs built from constants cost nothing to differentiate.
/// Broadcasting is limited to scalar tensors, a [1, c] row over the rows of
/// an [n, c] matrix, and an [n, 1] column over its columns.
namespace fac::ad {

using Shape = std::vector<std::size_t>;

[[nodiscard]] std::size_t numel_of(const Shape& shape);
[[nodiscard]] std::string shape_string(const Shape& shape);

struct Node;
class Gradients;
class Tensor;
Gradients backward(const Tensor& output);

class Tensor {
 public:
  Tensor() = default;

  static Tensor constant(Shape shape, std::vector<double> values);
  /// Leaf that requires a gradient.
  static Tensor parameter(Shape shape, std::vector<double> values);
  static Tensor zeros(Shape shape);
  static Tensor scalar(double value);

  [[nodiscard]] bool defined() const noexcept { return node_ != nullptr; }
  [[nodiscard]] const Shape& shape() const;
  [[nodiscard]] std::size_t rank() const { return shape().size(); }
  [[nodiscard]] std::size_t dim(std::size_t axis) const;
  [[nodiscard]] std::size_t numel() const;
  [[nodiscard]] std::span<const double> values() const;
  [[nodiscard]] double item() const;
  [[nodiscard]] double at(std::size_t row, std::size_t col) const;
  [[nodiscard]] bool requires_grad() const;
  [[nodiscard]] bool is_leaf() const;

  /// Same values, cut from the graph.
  [[nodiscard]] Tensor detach() const;

  /// Identity of the underlying node; used as the key of gradient maps.
  [[nodiscard]] const Node* id() const noexcept { return node_.get(); }

 private:
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}
  std::shared_ptr<Node> node_;

  friend Tensor make_op(Shape, std::vector<double>, std::vector<Tensor>,
                        std::function<void(std::span<const double>, std::vector<std::span<double>>&)>);
  friend class Gradients;
  friend Gradients backward(const Tensor& output);
};

/// Backward rule: receives the output adjoint and one adjoint span per input
/// (empty for inputs that do not require gradients) to accumulate into.
using BackwardFn = std::function<void(std::span<const double> grad_out,
                                      std::vector<std::span<double>>& grad_in)>;

/// Low-level constructor for custom operations.
[[nodiscard]] Tensor make_op(Shape shape, std::vector<double> values, std::vector<Tensor> inputs,
                             BackwardFn backward);

/// Gradients of a scalar with respect to the leaves it depends on.
class Gradients {
 public:
  /// Gradient of `leaf`, zeros when the output does not depend on it.
  [[nodiscard]] std::vector<double> of(const Tensor& leaf) const;
  [[nodiscard]] bool reached(const Tensor& leaf) const;

 private:
  std::unordered_map<const Node*, std::vector<double>> grads_;
  friend Gradients backward(const Tensor& output);
};

/// Reverse sweep from a scalar output. Pure: repeated calls on the same graph
/// return identical results. Throws ContractError for non-scalar outputs.
[[nodiscard]] Gradients backward(const Tensor& output);

// --- primitives ------------------------------------------------------------

[[nodiscard]] Tensor matmul(const Tensor& a, const Tensor& b);
[[nodiscard]] Tensor transpose(const Tensor& a);
[[nodiscard]] Tensor add(const Tensor& a, const Tensor& b);
[[nodiscard]] Tensor sub(const Tensor& a, const Tensor& b);
[[nodiscard]] Tensor mul(const Tensor& a, const Tensor& b);
[[nodiscard]] Tensor scale(const Tensor& a, double s);
[[nodiscard]] Tensor add_scalar(const Tensor& a, double s);
[[nodiscard]] Tensor relu(const Tensor& a);
[[nodiscard]] Tensor exp(const Tensor& a);
[[nodiscard]] Tensor log(const Tensor& a);
[[nodiscard]] Tensor sigmoid(const Tensor& a);
[[nodiscard]] Tensor reciprocal(const Tensor& a);
[[nodiscard]] Tensor sum(const Tensor& a);
[[nodiscard]] Tensor mean(const Tensor& a);
/// [n, c] -> [n, 1].
[[nodiscard]] Tensor sum_rows(const Tensor& a);
/// Rows (slices along axis 0) in the given order; indices may repeat.
[[nodiscard]] Tensor gather_rows(const Tensor& a, std::span<const std::size_t> index);
[[nodiscard]] Tensor concat_rows(const std::vector<Tensor>& parts);
[[nodiscard]] Tensor concat_cols(const Tensor& a, const Tensor& b);
[[nodiscard]] Tensor reshape(const Tensor& a, Shape shape);
/// Each row divided by its Euclidean norm; all-zero rows stay zero.
[[nodiscard]] Tensor l2_normalize_rows(const Tensor& a);
/// Max-shifted log-sum-exp of each row: [n, c] -> [n, 1].
[[nodiscard]] Tensor logsumexp_rows(const Tensor& a);
[[nodiscard]] Tensor softmax_rows(const Tensor& a);
/// Cosine similarity of matching rows: [n, c] x [n, c] -> [n, 1]. Zero rows give 0.
[[nodiscard]] Tensor cosine_similarity_rows(const Tensor& a, const Tensor& b);

/// Compressed row groups: group g holds indices[offsets[g] .. offsets[g+1]).
struct RowGroups {
  std::vector<std::size_t> offsets{0};
  std::vector<std::size_t> indices;

  void add(std::span<const std::size_t> group);
  [[nodiscard]] std::size_t size() const noexcept { return offsets.size() - 1; }
  [[nodiscard]] std::span<const std::size_t> group(std::size_t g) const;
  /// Groups of a row-major table with `width` entries per group.
  static RowGroups from_table(std::span<const std::size_t> table, std::size_t width);
};

/// Row g of the result is the mean of the rows of `a` listed in group g.
[[nodiscard]] Tensor group_mean_rows(const Tensor& a, const RowGroups& groups);

/// Row-wise entropic optimal-transport top-k. Each row of `scores` ([A, n])
/// is transported from uniform mass 1/n per entry onto two bins, "selected"
/// with mass k/n and "rejected" with mass (n-k)/n, under cost -score for the
/// selected bin and 0 for the other, with entropic regularizer `epsilon`.
/// `iters` log-domain Sinkhorn sweeps (row update, then column update) are
/// run; the output is n times the selected column of the final plan, so each
/// row sums to k.
///
/// With two bins the sweeps only depend on the gap d = g_sel - g_rej between
/// the column potentials (scaled by 1/epsilon):
///   d <- d + log(k / (n-k)) - log sum_i sig(d + x_i) + log sum_i sig(-d - x_i)
/// with x = score / epsilon, and the weights are k sig(d + x_i) / sum_j sig(d + x_j).
/// That recursion is what is evaluated and differentiated here. d starts at
/// -c / epsilon with c the midpoint between the k-th and (k+1)-th largest
/// score (ties to the smaller index); c is differentiated like any other
/// input, so the gradient is exact away from score ties.
[[nodiscard]] Tensor sinkhorn_topk_rows(const Tensor& scores, std::size_t k, double epsilon,
                                        std::size_t iters);

// --- finite differences ------------------------------------------------------

struct FiniteDiffReport {
  double max_rel_err = 0.0;
  std::size_t worst_index = 0;
  std::vector<double> analytic;
  std::vector<double> numeric;
};

/// Compares backward() against central differences (f(x+h e_i) - f(x-h e_i)) / 2h.
/// The relative error of coordinate i is |a_i - n_i| / max(|a_i|, |n_i|, floor)
/// with floor = 1e-3 * max_j max(|a_j|, |n_j|) + 1e-12, so coordinates that are
/// negligible next to the largest gradient entry are judged on absolute error.
[[nodiscard]] FiniteDiffReport finite_diff_check(const std::function<Tensor(const Tensor&)>& f,
                                                 const Tensor& x, double h = 1e-5);

}  // namespace fac::ad
