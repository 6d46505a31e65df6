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

#include "fac/tensor.hpp"

#include "fac/error.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <sstream>

namespace fac::ad {

struct Node {
  Shape shape;
  std::vector<double> value;
  bool requires_grad = false;
  std::uint64_t seq = 0;
  std::vector<std::shared_ptr<Node>> inputs;
  BackwardFn backward;
};

namespace {

std::atomic<std::uint64_t> g_next_seq{1};

std::shared_ptr<Node> new_node(Shape shape, std::vector<double> values, bool requires_grad) {
  if (values.size() != numel_of(shape)) {
    throw ShapeError("tensor of shape " + shape_string(shape) + " given " +
                     std::to_string(values.size()) + " values");
  }
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value = std::move(values);
  n->requires_grad = requires_grad;
  n->seq = g_next_seq.fetch_add(1, std::memory_order_relaxed);
  return n;
}

void require_rank2(const Tensor& t, const char* op) {
  if (t.rank() != 2) throw ShapeError(std::string(op) + ": expected a matrix, got " + shape_string(t.shape()));
}

}  // namespace

std::size_t numel_of(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream s;
  s << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) s << (i ? ", " : "") << shape[i];
  s << ']';
  return s.str();
}

// --- Tensor -------------------------------------------------------------------

Tensor Tensor::constant(Shape shape, std::vector<double> values) {
  return Tensor(new_node(std::move(shape), std::move(values), false));
}

Tensor Tensor::parameter(Shape shape, std::vector<double> values) {
  return Tensor(new_node(std::move(shape), std::move(values), true));
}

Tensor Tensor::zeros(Shape shape) {
  const std::size_t n = numel_of(shape);
  return constant(std::move(shape), std::vector<double>(n, 0.0));
}

Tensor Tensor::scalar(double value) { return constant({}, {value}); }

const Shape& Tensor::shape() const {
  if (!node_) throw ContractError("use of an undefined tensor");
  return node_->shape;
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= shape().size()) throw ShapeError("axis out of range for shape " + shape_string(shape()));
  return node_->shape[axis];
}

std::size_t Tensor::numel() const { return numel_of(shape()); }

std::span<const double> Tensor::values() const {
  if (!node_) throw ContractError("use of an undefined tensor");
  return node_->value;
}

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() on a tensor of shape " + shape_string(shape()));
  return node_->value[0];
}

double Tensor::at(std::size_t row, std::size_t col) const {
  require_rank2(*this, "at");
  return node_->value.at(row * node_->shape[1] + col);
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

bool Tensor::is_leaf() const { return node_ && !node_->backward; }

Tensor Tensor::detach() const { return constant(shape(), std::vector<double>(values().begin(), values().end())); }

Tensor make_op(Shape shape, std::vector<double> values, std::vector<Tensor> inputs, BackwardFn backward) {
  const bool needs = std::any_of(inputs.begin(), inputs.end(), [](const Tensor& t) { return t.requires_grad(); });
  auto node = new_node(std::move(shape), std::move(values), needs);
  if (needs) {
    node->inputs.reserve(inputs.size());
    for (Tensor& t : inputs) node->inputs.push_back(std::move(t.node_));
    node->backward = std::move(backward);
  }
  return Tensor(std::move(node));
}

// --- backward -------------------------------------------------------------------

std::vector<double> Gradients::of(const Tensor& leaf) const {
  auto it = grads_.find(leaf.id());
  if (it != grads_.end()) return it->second;
  return std::vector<double>(leaf.numel(), 0.0);
}

bool Gradients::reached(const Tensor& leaf) const { return grads_.count(leaf.id()) != 0; }

Gradients backward(const Tensor& output) {
  if (!output.defined() || output.numel() != 1) {
    throw ContractError("backward() needs a scalar output");
  }
  Gradients result;
  if (!output.requires_grad()) return result;

  // Collect the differentiable subgraph. Inputs are always created before
  // their consumers, so descending sequence numbers give a reverse
  // topological order.
  std::vector<Node*> nodes;
  {
    std::unordered_map<const Node*, bool> seen;
    std::vector<Node*> stack{output.node_.get()};
    seen[stack.back()] = true;
    while (!stack.empty()) {
      Node* n = stack.back();
      stack.pop_back();
      nodes.push_back(n);
      for (const auto& in : n->inputs) {
        if (in->requires_grad && !seen[in.get()]) {
          seen[in.get()] = true;
          stack.push_back(in.get());
        }
      }
    }
  }
  std::sort(nodes.begin(), nodes.end(), [](const Node* a, const Node* b) { return a->seq > b->seq; });

  std::unordered_map<const Node*, std::vector<double>> adjoint;
  adjoint[output.node_.get()] = {1.0};
  std::vector<std::span<double>> spans;
  for (Node* n : nodes) {
    auto it = adjoint.find(n);
    if (it == adjoint.end()) continue;
    if (!n->backward) {
      result.grads_.emplace(n, std::move(it->second));
      adjoint.erase(it);
      continue;
    }
    spans.assign(n->inputs.size(), {});
    for (std::size_t i = 0; i < n->inputs.size(); ++i) {
      Node* in = n->inputs[i].get();
      if (!in->requires_grad) continue;
      auto& g = adjoint[in];
      if (g.empty()) g.assign(in->value.size(), 0.0);
      spans[i] = g;
    }
    // The map may rehash above; look the adjoint up again.
    const std::vector<double> grad_out = std::move(adjoint[n]);
    adjoint.erase(n);
    n->backward(grad_out, spans);
  }
  return result;
}

// --- elementwise and linear algebra ------------------------------------------------

namespace {

enum class Broadcast { kSame, kScalar, kRow, kCol };

Broadcast broadcast_mode(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() == b.shape()) return Broadcast::kSame;
  if (b.numel() == 1) return Broadcast::kScalar;
  if (a.rank() == 2) {
    const std::size_t n = a.dim(0);
    const std::size_t c = a.dim(1);
    if ((b.shape() == Shape{1, c}) || (b.shape() == Shape{c})) return Broadcast::kRow;
    if (b.shape() == Shape{n, 1}) return Broadcast::kCol;
  }
  throw ShapeError(std::string(op) + ": cannot broadcast " + shape_string(b.shape()) + " onto " +
                   shape_string(a.shape()));
}

inline std::size_t bcast_index(Broadcast m, std::size_t i, std::size_t cols) {
  switch (m) {
    case Broadcast::kSame: return i;
    case Broadcast::kScalar: return 0;
    case Broadcast::kRow: return i % cols;
    case Broadcast::kCol: return i / cols;
  }
  return i;
}

std::size_t cols_of(const Tensor& a) { return a.rank() == 2 ? a.dim(1) : 1; }

bool smaller(const Tensor& a, const Tensor& b) { return a.numel() < b.numel(); }

template <class F, class G>
Tensor unary(const Tensor& a, F forward, G derivative) {
  const auto x = a.values();
  std::vector<double> y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = forward(x[i]);
  std::vector<double> yc = y;
  return make_op(a.shape(), std::move(y), {a},
                 [x = std::vector<double>(x.begin(), x.end()), yc = std::move(yc), derivative](
                     std::span<const double> g, std::vector<std::span<double>>& gi) {
                   for (std::size_t i = 0; i < g.size(); ++i) gi[0][i] += g[i] * derivative(x[i], yc[i]);
                 });
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul");
  require_rank2(b, "matmul");
  const std::size_t n = a.dim(0), k = a.dim(1), m = b.dim(1);
  if (b.dim(0) != k) {
    throw ShapeError("matmul: " + shape_string(a.shape()) + " x " + shape_string(b.shape()));
  }
  const auto av = a.values();
  const auto bv = b.values();
  std::vector<double> out(n * m, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double* row = out.data() + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = av[i * k + p];
      const double* brow = bv.data() + p * m;
      for (std::size_t j = 0; j < m; ++j) row[j] += aip * brow[j];
    }
  }
  return make_op({n, m}, std::move(out), {a, b},
                 [a, b, n, k, m](std::span<const double> g, std::vector<std::span<double>>& gi) {
                   const auto av = a.values();
                   const auto bv = b.values();
                   if (!gi[0].empty()) {
                     for (std::size_t i = 0; i < n; ++i) {
                       for (std::size_t p = 0; p < k; ++p) {
                         double acc = 0.0;
                         for (std::size_t j = 0; j < m; ++j) acc += g[i * m + j] * bv[p * m + j];
                         gi[0][i * k + p] += acc;
                       }
                     }
                   }
                   if (!gi[1].empty()) {
                     for (std::size_t i = 0; i < n; ++i) {
                       for (std::size_t p = 0; p < k; ++p) {
                         const double aip = av[i * k + p];
                         for (std::size_t j = 0; j < m; ++j) gi[1][p * m + j] += aip * g[i * m + j];
                       }
                     }
                   }
                 });
}

Tensor transpose(const Tensor& a) {
  require_rank2(a, "transpose");
  const std::size_t n = a.dim(0), m = a.dim(1);
  const auto v = a.values();
  std::vector<double> out(n * m);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) out[j * n + i] = v[i * m + j];
  }
  return make_op({m, n}, std::move(out), {a}, [n, m](std::span<const double> g, std::vector<std::span<double>>& gi) {
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < m; ++j) gi[0][i * m + j] += g[j * n + i];
    }
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  if (smaller(a, b)) return add(b, a);
  const Broadcast mode = broadcast_mode(a, b, "add");
  const std::size_t cols = cols_of(a);
  const auto av = a.values();
  const auto bv = b.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] + bv[bcast_index(mode, i, cols)];
  return make_op(a.shape(), std::move(out), {a, b},
                 [mode, cols](std::span<const double> g, std::vector<std::span<double>>& gi) {
                   for (std::size_t i = 0; i < g.size(); ++i) {
                     if (!gi[0].empty()) gi[0][i] += g[i];
                     if (!gi[1].empty()) gi[1][bcast_index(mode, i, cols)] += g[i];
                   }
                 });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  if (smaller(a, b)) return scale(sub(b, a), -1.0);
  const Broadcast mode = broadcast_mode(a, b, "sub");
  const std::size_t cols = cols_of(a);
  const auto av = a.values();
  const auto bv = b.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] - bv[bcast_index(mode, i, cols)];
  return make_op(a.shape(), std::move(out), {a, b},
                 [mode, cols](std::span<const double> g, std::vector<std::span<double>>& gi) {
                   for (std::size_t i = 0; i < g.size(); ++i) {
                     if (!gi[0].empty()) gi[0][i] += g[i];
                     if (!gi[1].empty()) gi[1][bcast_index(mode, i, cols)] -= g[i];
                   }
                 });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  if (smaller(a, b)) return mul(b, a);
  const Broadcast mode = broadcast_mode(a, b, "mul");
  const std::size_t cols = cols_of(a);
  const auto av = a.values();
  const auto bv = b.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] * bv[bcast_index(mode, i, cols)];
  return make_op(a.shape(), std::move(out), {a, b},
                 [a, b, mode, cols](std::span<const double> g, std::vector<std::span<double>>& gi) {
                   const auto av = a.values();
                   const auto bv = b.values();
                   for (std::size_t i = 0; i < g.size(); ++i) {
                     const std::size_t j = bcast_index(mode, i, cols);
                     if (!gi[0].empty()) gi[0][i] += g[i] * bv[j];
                     if (!gi[1].empty()) gi[1][j] += g[i] * av[i];
                   }
                 });
}

Tensor scale(const Tensor& a, double s) {
  const auto av = a.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = s * av[i];
  return make_op(a.shape(), std::move(out), {a}, [s](std::span<const double> g, std::vector<std::span<double>>& gi) {
    for (std::size_t i = 0; i < g.size(); ++i) gi[0][i] += s * g[i];
  });
}

Tensor add_scalar(const Tensor& a, double s) {
  const auto av = a.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] + s;
  return make_op(a.shape(), std::move(out), {a}, [](std::span<const double> g, std::vector<std::span<double>>& gi) {
    for (std::size_t i = 0; i < g.size(); ++i) gi[0][i] += g[i];
  });
}

// relu'(0) is taken as 0.
Tensor relu(const Tensor& a) {
  return unary(a, [](double x) { return x > 0.0 ? x : 0.0; }, [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor exp(const Tensor& a) {
  return unary(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& a) {
  return unary(a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Tensor sigmoid(const Tensor& a) {
  return unary(
      a,
      [](double x) {
        if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor reciprocal(const Tensor& a) {
  return unary(a, [](double x) { return 1.0 / x; }, [](double, double y) { return -y * y; });
}

Tensor sum(const Tensor& a) {
  const auto v = a.values();
  double s = 0.0;
  for (double x : v) s += x;
  return make_op({}, {s}, {a}, [](std::span<const double> g, std::vector<std::span<double>>& gi) {
    for (double& x : gi[0]) x += g[0];
  });
}

Tensor mean(const Tensor& a) {
  const std::size_t n = a.numel();
  if (n == 0) throw ShapeError("mean of an empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(n));
}

Tensor sum_rows(const Tensor& a) {
  require_rank2(a, "sum_rows");
  const std::size_t n = a.dim(0), c = a.dim(1);
  const auto v = a.values();
  std::vector<double> out(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < c; ++j) out[i] += v[i * c + j];
  }
  return make_op({n, 1}, std::move(out), {a}, [c](std::span<const double> g, std::vector<std::span<double>>& gi) {
    for (std::size_t i = 0; i < g.size(); ++i) {
      for (std::size_t j = 0; j < c; ++j) gi[0][i * c + j] += g[i];
    }
  });
}

Tensor gather_rows(const Tensor& a, std::span<const std::size_t> index) {
  if (a.rank() < 1) throw ShapeError("gather_rows on a scalar");
  const std::size_t n = a.dim(0);
  const std::size_t stride = n == 0 ? 0 : a.numel() / n;
  const auto v = a.values();
  std::vector<double> out(index.size() * stride);
  for (std::size_t r = 0; r < index.size(); ++r) {
    if (index[r] >= n) throw ArgumentError("gather_rows: index out of range");
    std::copy_n(v.begin() + static_cast<std::ptrdiff_t>(index[r] * stride), stride,
                out.begin() + static_cast<std::ptrdiff_t>(r * stride));
  }
  Shape shape = a.shape();
  shape[0] = index.size();
  return make_op(std::move(shape), std::move(out), {a},
                 [idx = std::vector<std::size_t>(index.begin(), index.end()), stride](
                     std::span<const double> g, std::vector<std::span<double>>& gi) {
                   for (std::size_t r = 0; r < idx.size(); ++r) {
                     for (std::size_t j = 0; j < stride; ++j) gi[0][idx[r] * stride + j] += g[r * stride + j];
                   }
                 });
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows of nothing");
  Shape shape = parts[0].shape();
  if (shape.empty()) throw ShapeError("concat_rows of scalars");
  std::size_t rows = 0;
  std::vector<std::size_t> offsets;
  std::vector<double> out;
  for (const Tensor& p : parts) {
    if (p.rank() != shape.size() || !std::equal(shape.begin() + 1, shape.end(), p.shape().begin() + 1)) {
      throw ShapeError("concat_rows: mismatched shapes");
    }
    offsets.push_back(out.size());
    rows += p.dim(0);
    out.insert(out.end(), p.values().begin(), p.values().end());
  }
  shape[0] = rows;
  return make_op(std::move(shape), std::move(out), parts,
                 [offsets](std::span<const double> g, std::vector<std::span<double>>& gi) {
                   for (std::size_t p = 0; p < gi.size(); ++p) {
                     for (std::size_t j = 0; j < gi[p].size(); ++j) gi[p][j] += g[offsets[p] + j];
                   }
                 });
}

Tensor concat_cols(const Tensor& a, const Tensor& b) {
  require_rank2(a, "concat_cols");
  require_rank2(b, "concat_cols");
  const std::size_t n = a.dim(0), ca = a.dim(1), cb = b.dim(1);
  if (b.dim(0) != n) throw ShapeError("concat_cols: row counts differ");
  const auto av = a.values();
  const auto bv = b.values();
  const std::size_t c = ca + cb;
  std::vector<double> out(n * c);
  for (std::size_t i = 0; i < n; ++i) {
    std::copy_n(av.begin() + static_cast<std::ptrdiff_t>(i * ca), ca, out.begin() + static_cast<std::ptrdiff_t>(i * c));
    std::copy_n(bv.begin() + static_cast<std::ptrdiff_t>(i * cb), cb,
                out.begin() + static_cast<std::ptrdiff_t>(i * c + ca));
  }
  return make_op({n, c}, std::move(out), {a, b},
                 [n, ca, cb, c](std::span<const double> g, std::vector<std::span<double>>& gi) {
                   for (std::size_t i = 0; i < n; ++i) {
                     if (!gi[0].empty()) {
                       for (std::size_t j = 0; j < ca; ++j) gi[0][i * ca + j] += g[i * c + j];
                     }
                     if (!gi[1].empty()) {
                       for (std::size_t j = 0; j < cb; ++j) gi[1][i * cb + j] += g[i * c + ca + j];
                     }
                   }
                 });
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (numel_of(shape) != a.numel()) {
    throw ShapeError("reshape " + shape_string(a.shape()) + " -> " + shape_string(shape));
  }
  return make_op(std::move(shape), std::vector<double>(a.values().begin(), a.values().end()), {a},
                 [](std::span<const double> g, std::vector<std::span<double>>& gi) {
                   for (std::size_t i = 0; i < g.size(); ++i) gi[0][i] += g[i];
                 });
}

// --- row-wise reductions -----------------------------------------------------------

Tensor l2_normalize_rows(const Tensor& a) {
  require_rank2(a, "l2_normalize_rows");
  const std::size_t n = a.dim(0), c = a.dim(1);
  const auto v = a.values();
  std::vector<double> out(n * c, 0.0);
  std::vector<double> norms(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) s += v[i * c + j] * v[i * c + j];
    norms[i] = std::sqrt(s);
    if (norms[i] > 0.0) {
      for (std::size_t j = 0; j < c; ++j) out[i * c + j] = v[i * c + j] / norms[i];
    }
  }
  std::vector<double> y = out;
  return make_op({n, c}, std::move(out), {a},
                 [y = std::move(y), norms = std::move(norms), n, c](std::span<const double> g,
                                                                    std::vector<std::span<double>>& gi) {
                   for (std::size_t i = 0; i < n; ++i) {
                     if (!(norms[i] > 0.0)) continue;
                     double yg = 0.0;
                     for (std::size_t j = 0; j < c; ++j) yg += y[i * c + j] * g[i * c + j];
                     for (std::size_t j = 0; j < c; ++j) {
                       gi[0][i * c + j] += (g[i * c + j] - y[i * c + j] * yg) / norms[i];
                     }
                   }
                 });
}

Tensor logsumexp_rows(const Tensor& a) {
  require_rank2(a, "logsumexp_rows");
  const std::size_t n = a.dim(0), c = a.dim(1);
  if (c == 0) throw ShapeError("logsumexp_rows of empty rows");
  const auto v = a.values();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = v.data() + i * c;
    const double mx = *std::max_element(row, row + c);
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) s += std::exp(row[j] - mx);
    out[i] = mx + std::log(s);
  }
  std::vector<double> lse = out;
  return make_op({n, 1}, std::move(out), {a},
                 [a, lse = std::move(lse), n, c](std::span<const double> g, std::vector<std::span<double>>& gi) {
                   const auto v = a.values();
                   for (std::size_t i = 0; i < n; ++i) {
                     for (std::size_t j = 0; j < c; ++j) gi[0][i * c + j] += g[i] * std::exp(v[i * c + j] - lse[i]);
                   }
                 });
}

Tensor softmax_rows(const Tensor& a) {
  require_rank2(a, "softmax_rows");
  const std::size_t n = a.dim(0), c = a.dim(1);
  const auto v = a.values();
  std::vector<double> out(n * c);
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = v.data() + i * c;
    const double mx = *std::max_element(row, row + c);
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) s += (out[i * c + j] = std::exp(row[j] - mx));
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] /= s;
  }
  std::vector<double> y = out;
  return make_op({n, c}, std::move(out), {a},
                 [y = std::move(y), n, c](std::span<const double> g, std::vector<std::span<double>>& gi) {
                   for (std::size_t i = 0; i < n; ++i) {
                     double gy = 0.0;
                     for (std::size_t j = 0; j < c; ++j) gy += g[i * c + j] * y[i * c + j];
                     for (std::size_t j = 0; j < c; ++j) gi[0][i * c + j] += y[i * c + j] * (g[i * c + j] - gy);
                   }
                 });
}

Tensor cosine_similarity_rows(const Tensor& a, const Tensor& b) {
  require_rank2(a, "cosine_similarity_rows");
  if (a.shape() != b.shape()) throw ShapeError("cosine_similarity_rows: shapes differ");
  const std::size_t n = a.dim(0), c = a.dim(1);
  const auto av = a.values();
  const auto bv = b.values();
  std::vector<double> out(n, 0.0), na(n), nb(n);
  for (std::size_t i = 0; i < n; ++i) {
    double ab = 0.0, aa = 0.0, bb = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      ab += av[i * c + j] * bv[i * c + j];
      aa += av[i * c + j] * av[i * c + j];
      bb += bv[i * c + j] * bv[i * c + j];
    }
    na[i] = std::sqrt(aa);
    nb[i] = std::sqrt(bb);
    if (na[i] > 0.0 && nb[i] > 0.0) out[i] = ab / (na[i] * nb[i]);
  }
  std::vector<double> cos = out;
  return make_op({n, 1}, std::move(out), {a, b},
                 [a, b, cos = std::move(cos), na = std::move(na), nb = std::move(nb), n, c](
                     std::span<const double> g, std::vector<std::span<double>>& gi) {
                   const auto av = a.values();
                   const auto bv = b.values();
                   for (std::size_t i = 0; i < n; ++i) {
                     if (!(na[i] > 0.0 && nb[i] > 0.0)) continue;
                     const double inv = 1.0 / (na[i] * nb[i]);
                     for (std::size_t j = 0; j < c; ++j) {
                       const double aij = av[i * c + j], bij = bv[i * c + j];
                       if (!gi[0].empty()) gi[0][i * c + j] += g[i] * (bij * inv - cos[i] * aij / (na[i] * na[i]));
                       if (!gi[1].empty()) gi[1][i * c + j] += g[i] * (aij * inv - cos[i] * bij / (nb[i] * nb[i]));
                     }
                   }
                 });
}

// --- grouped means --------------------------------------------------------------

void RowGroups::add(std::span<const std::size_t> group) {
  indices.insert(indices.end(), group.begin(), group.end());
  offsets.push_back(indices.size());
}

std::span<const std::size_t> RowGroups::group(std::size_t g) const {
  return std::span<const std::size_t>(indices).subspan(offsets[g], offsets[g + 1] - offsets[g]);
}

RowGroups RowGroups::from_table(std::span<const std::size_t> table, std::size_t width) {
  if (width == 0 || table.size() % width != 0) throw ShapeError("row table width does not divide its size");
  RowGroups groups;
  groups.indices.assign(table.begin(), table.end());
  groups.offsets.resize(table.size() / width + 1);
  for (std::size_t g = 0; g < groups.offsets.size(); ++g) groups.offsets[g] = g * width;
  return groups;
}

Tensor group_mean_rows(const Tensor& a, const RowGroups& groups) {
  require_rank2(a, "group_mean_rows");
  const std::size_t n = a.dim(0), c = a.dim(1), G = groups.size();
  const auto v = a.values();
  std::vector<double> out(G * c, 0.0);
  for (std::size_t g = 0; g < G; ++g) {
    const auto members = groups.group(g);
    if (members.empty()) throw ArgumentError("group_mean_rows: empty group");
    const double inv = 1.0 / static_cast<double>(members.size());
    double* row = out.data() + g * c;
    for (std::size_t r : members) {
      if (r >= n) throw ArgumentError("group_mean_rows: index out of range");
      for (std::size_t j = 0; j < c; ++j) row[j] += v[r * c + j];
    }
    for (std::size_t j = 0; j < c; ++j) row[j] *= inv;
  }
  return make_op({G, c}, std::move(out), {a}, [groups, c](std::span<const double> g, std::vector<std::span<double>>& gi) {
    for (std::size_t k = 0; k < groups.size(); ++k) {
      const auto members = groups.group(k);
      const double inv = 1.0 / static_cast<double>(members.size());
      for (std::size_t r : members) {
        for (std::size_t j = 0; j < c; ++j) gi[0][r * c + j] += inv * g[k * c + j];
      }
    }
  });
}

// --- Sinkhorn top-k ----------------------------------------------------------------

namespace {

// sig(z) and sig(-z) from a single exponential.
inline void sig_pair(double z, double& hi, double& lo) {
  const double e = std::exp(-std::abs(z));
  const double inv = 1.0 / (1.0 + e);
  if (z >= 0.0) {
    hi = inv;
    lo = e * inv;
  } else {
    hi = e * inv;
    lo = inv;
  }
}

}  // namespace

Tensor sinkhorn_topk_rows(const Tensor& scores, std::size_t k, double epsilon, std::size_t iters) {
  require_rank2(scores, "sinkhorn_topk_rows");
  const std::size_t A = scores.dim(0), n = scores.dim(1);
  if (k < 1 || k >= n) throw ArgumentError("soft top-k needs 1 <= k < n");
  if (!(epsilon > 0.0)) throw ArgumentError("epsilon must be positive");
  if (iters < 1) throw ArgumentError("at least one Sinkhorn sweep is required");
  const double log_ratio = std::log(static_cast<double>(k) / static_cast<double>(n - k));
  const auto sv = scores.values();

  std::vector<double> out(A * n);
  // Gap d_0 .. d_{iters-1} of every row.
  std::vector<double> gaps(A * iters);
  std::vector<std::size_t> pivots(2 * A), rank(n);
  std::vector<double> x(n);
  for (std::size_t a = 0; a < A; ++a) {
    const double* s = sv.data() + a * n;
    for (std::size_t i = 0; i < n; ++i) x[i] = s[i] / epsilon;
    // k-th and (k+1)-th largest entries, ties to the smaller index.
    for (std::size_t i = 0; i < n; ++i) rank[i] = i;
    auto before = [s](std::size_t i, std::size_t j) { return s[i] > s[j] || (s[i] == s[j] && i < j); };
    std::nth_element(rank.begin(), rank.begin() + static_cast<std::ptrdiff_t>(k - 1), rank.end(), before);
    const std::size_t kth = rank[k - 1];
    const std::size_t next = *std::min_element(rank.begin() + static_cast<std::ptrdiff_t>(k), rank.end(), before);
    pivots[2 * a] = kth;
    pivots[2 * a + 1] = next;
    double d = -0.5 * (s[kth] + s[next]) / epsilon;

    double* g = gaps.data() + a * iters;
    g[0] = d;
    for (std::size_t t = 1; t < iters; ++t) {
      double s1 = 0.0, s0 = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        double hi, lo;
        sig_pair(d + x[i], hi, lo);
        s1 += hi;
        s0 += lo;
      }
      d += log_ratio - std::log(s1) + std::log(s0);
      g[t] = d;
    }
    double s1 = 0.0, lo;
    double* w = out.data() + a * n;
    for (std::size_t i = 0; i < n; ++i) {
      sig_pair(d + x[i], w[i], lo);
      s1 += w[i];
    }
    const double scale_k = static_cast<double>(k) / s1;
    for (std::size_t i = 0; i < n; ++i) w[i] *= scale_k;
  }

  std::vector<double> weights = out;
  return make_op(
      {A, n}, std::move(out), {scores},
      [scores, gaps = std::move(gaps), pivots = std::move(pivots), weights = std::move(weights), A, n, k, epsilon,
       iters](
          std::span<const double> grad, std::vector<std::span<double>>& gi) {
        const auto sv = scores.values();
        const double kd = static_cast<double>(k);
        std::vector<double> x(n), xbar(n), dsig(n);
        for (std::size_t a = 0; a < A; ++a) {
          const double* s = sv.data() + a * n;
          const double* w = weights.data() + a * n;
          const double* gw = grad.data() + a * n;
          const double* g = gaps.data() + a * iters;
          for (std::size_t i = 0; i < n; ++i) x[i] = s[i] / epsilon;

          // Output: w_i = k sig(z_i) / S1 with z_i = d + x_i.
          const double d_last = g[iters - 1];
          double s1 = 0.0, gw_dot_w = 0.0;
          for (std::size_t i = 0; i < n; ++i) {
            double hi, lo;
            sig_pair(d_last + x[i], hi, lo);
            s1 += hi;
            dsig[i] = hi * lo;
            gw_dot_w += gw[i] * w[i];
          }
          double dbar = 0.0;
          for (std::size_t i = 0; i < n; ++i) {
            const double zbar = dsig[i] * (kd / s1) * (gw[i] - gw_dot_w / kd);
            xbar[i] = zbar;
            dbar += zbar;
          }

          // Gap recursion, newest step first.
          for (std::size_t t = iters - 1; t >= 1; --t) {
            const double d = g[t - 1];
            double p1 = 0.0, p0 = 0.0, dp = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
              double hi, lo;
              sig_pair(d + x[i], hi, lo);
              p1 += hi;
              p0 += lo;
              dsig[i] = hi * lo;
              dp += dsig[i];
            }
            const double c = 1.0 / p1 + 1.0 / p0;
            const double f = dbar * c;
            for (std::size_t i = 0; i < n; ++i) xbar[i] -= f * dsig[i];
            dbar *= 1.0 - dp * c;
          }
          // d_0 = -(s_kth + s_next) / (2 epsilon).
          xbar[pivots[2 * a]] -= 0.5 * dbar;
          xbar[pivots[2 * a + 1]] -= 0.5 * dbar;
          for (std::size_t i = 0; i < n; ++i) gi[0][a * n + i] += xbar[i] / epsilon;
        }
      });
}

// --- finite differences ------------------------------------------------------

FiniteDiffReport finite_diff_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double h) {
  const std::vector<double> x0(x.values().begin(), x.values().end());
  const Tensor leaf = Tensor::parameter(x.shape(), x0);
  const Tensor y = f(leaf);
  FiniteDiffReport rep;
  rep.analytic = backward(y).of(leaf);
  rep.numeric.resize(x0.size());
  std::vector<double> xp = x0;
  for (std::size_t i = 0; i < x0.size(); ++i) {
    xp[i] = x0[i] + h;
    const double fp = f(Tensor::constant(x.shape(), xp)).item();
    xp[i] = x0[i] - h;
    const double fm = f(Tensor::constant(x.shape(), xp)).item();
    xp[i] = x0[i];
    rep.numeric[i] = (fp - fm) / (2.0 * h);
  }
  double gmax = 0.0;
  for (std::size_t i = 0; i < x0.size(); ++i) {
    gmax = std::max({gmax, std::abs(rep.analytic[i]), std::abs(rep.numeric[i])});
  }
  const double floor = 1e-3 * gmax + 1e-12;
  for (std::size_t i = 0; i < x0.size(); ++i) {
    const double denom = std::max({std::abs(rep.analytic[i]), std::abs(rep.numeric[i]), floor});
    const double err = std::abs(rep.analytic[i] - rep.numeric[i]) / denom;
    if (err > rep.max_rel_err || !std::isfinite(err)) {
      rep.max_rel_err = std::isfinite(err) ? err : std::numeric_limits<double>::infinity();
      rep.worst_index = i;
    }
  }
  return rep;
}

}  // namespace fac::ad
