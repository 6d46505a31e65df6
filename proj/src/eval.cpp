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

#include "fac/eval.hpp"

#include "fac/error.hpp"
#include "fac/rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>

namespace fac {

namespace {

// Label -> dense class id, in ascending label order.
std::map<std::uint32_t, std::size_t> class_ids(std::span<const std::uint32_t> labels) {
  std::map<std::uint32_t, std::size_t> ids;
  for (std::uint32_t l : labels) ids.emplace(l, 0);
  std::size_t next = 0;
  for (auto& [label, id] : ids) id = next++;
  return ids;
}

}  // namespace

VarianceReport class_variance(const Embeddings& x, std::span<const std::uint32_t> labels) {
  if (static_cast<std::size_t>(x.rows()) != labels.size()) throw ArgumentError("one label per embedding row is required");
  const auto ids = class_ids(labels);
  const std::size_t C = ids.size();
  if (C < 2) throw ArgumentError("class variance needs at least two classes");
  const Eigen::Index d = x.cols();
  Eigen::MatrixXd centroid = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(C), d);
  std::vector<std::size_t> count(C, 0);
  std::vector<std::size_t> cls(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    cls[i] = ids.at(labels[i]);
    centroid.row(static_cast<Eigen::Index>(cls[i])) += x.row(static_cast<Eigen::Index>(i));
    ++count[cls[i]];
  }
  for (std::size_t c = 0; c < C; ++c) centroid.row(static_cast<Eigen::Index>(c)) /= static_cast<double>(count[c]);

  std::vector<double> scatter(C, 0.0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    scatter[cls[i]] += (x.row(static_cast<Eigen::Index>(i)) - centroid.row(static_cast<Eigen::Index>(cls[i]))).squaredNorm();
  }
  VarianceReport r;
  for (std::size_t c = 0; c < C; ++c) r.sigma2_intra += scatter[c] / static_cast<double>(count[c]);
  r.sigma2_intra /= static_cast<double>(C);
  double inter = 0.0;
  for (std::size_t a = 0; a < C; ++a) {
    for (std::size_t b = a + 1; b < C; ++b) {
      inter += (centroid.row(static_cast<Eigen::Index>(a)) - centroid.row(static_cast<Eigen::Index>(b))).squaredNorm();
    }
  }
  r.sigma2_inter = inter / static_cast<double>(C * (C - 1) / 2);
  if (r.sigma2_intra > 0.0) {
    r.ratio = r.sigma2_inter / r.sigma2_intra;
  } else if (r.sigma2_inter > 0.0) {
    r.ratio = std::numeric_limits<double>::infinity();
    r.infinite = true;
  } else {
    r.ratio = std::numeric_limits<double>::quiet_NaN();
    r.degenerate = true;
  }
  return r;
}

std::vector<double> correlation_map(const Embeddings& x, std::size_t query) {
  if (query >= static_cast<std::size_t>(x.rows())) throw ArgumentError("query index out of range");
  const auto q = x.row(static_cast<Eigen::Index>(query));
  const double qn = q.norm();
  std::vector<double> out(static_cast<std::size_t>(x.rows()), 0.0);
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double n = x.row(i).norm();
    if (n > 0.0 && qn > 0.0) out[static_cast<std::size_t>(i)] = x.row(i).dot(q) / (n * qn);
  }
  return out;
}

void write_correlation(std::span<const double> values, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  char buf[32];
  for (double v : values) {
    std::snprintf(buf, sizeof buf, "%.17g\n", v);
    out << buf;
  }
  if (!out) throw IoError("write failed: " + path.string());
}

ProbeSplit stratified_split(std::span<const std::uint32_t> labels, std::uint64_t seed) {
  const auto ids = class_ids(labels);
  if (ids.size() < 2) throw ArgumentError("a probe needs at least two classes");
  std::vector<std::vector<std::size_t>> members(ids.size());
  for (std::size_t i = 0; i < labels.size(); ++i) members[ids.at(labels[i])].push_back(i);
  const CounterRng rng(seed);
  ProbeSplit split;
  for (std::size_t c = 0; c < members.size(); ++c) {
    auto& m = members[c];
    if (m.size() < 2) throw ArgumentError("every class needs at least two samples");
    CounterRng r = rng.derive(c);
    r.shuffle(std::span<std::size_t>(m));
    const std::size_t n_train = std::clamp<std::size_t>(m.size() * 4 / 5, 1, m.size() - 1);
    split.train.insert(split.train.end(), m.begin(), m.begin() + static_cast<std::ptrdiff_t>(n_train));
    split.test.insert(split.test.end(), m.begin() + static_cast<std::ptrdiff_t>(n_train), m.end());
  }
  std::sort(split.train.begin(), split.train.end());
  std::sort(split.test.begin(), split.test.end());
  return split;
}

ProbeResult linear_probe(const Embeddings& x, std::span<const std::uint32_t> labels, std::uint64_t split_seed,
                         const ProbeConfig& cfg) {
  return linear_probe(x, labels, stratified_split(labels, split_seed), cfg);
}

ProbeResult linear_probe(const Embeddings& x, std::span<const std::uint32_t> labels, const ProbeSplit& split,
                         const ProbeConfig& cfg) {
  if (static_cast<std::size_t>(x.rows()) != labels.size()) throw ArgumentError("one label per embedding row is required");
  if (split.train.empty() || split.test.empty()) throw ArgumentError("probe split is empty");
  const auto ids = class_ids(labels);
  const auto C = static_cast<Eigen::Index>(ids.size());
  const Eigen::Index d = x.cols();
  const auto n = static_cast<Eigen::Index>(split.train.size());

  Eigen::MatrixXd xt(n, d);
  Eigen::MatrixXd y = Eigen::MatrixXd::Zero(n, C);
  for (Eigen::Index i = 0; i < n; ++i) {
    const std::size_t src = split.train[static_cast<std::size_t>(i)];
    xt.row(i) = x.row(static_cast<Eigen::Index>(src));
    y(i, static_cast<Eigen::Index>(ids.at(labels[src]))) = 1.0;
  }
  const Eigen::RowVectorXd mu = xt.colwise().mean();
  Eigen::RowVectorXd sd = ((xt.rowwise() - mu).array().square().colwise().sum() / static_cast<double>(n)).sqrt();
  for (Eigen::Index j = 0; j < d; ++j) {
    if (!(sd(j) > 1e-12)) sd(j) = 1.0;
  }
  auto standardize = [&](const Eigen::MatrixXd& m) -> Eigen::MatrixXd {
    return (m.rowwise() - mu).array().rowwise() / sd.array();
  };
  const Eigen::MatrixXd z = standardize(xt);

  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(d, C);
  Eigen::RowVectorXd b = Eigen::RowVectorXd::Zero(C);
  Eigen::MatrixXd logits(n, C);
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    logits.noalias() = z * w;
    logits.rowwise() += b;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double mx = logits.row(i).maxCoeff();
      logits.row(i) = (logits.row(i).array() - mx).exp();
      logits.row(i) /= logits.row(i).sum();
    }
    logits -= y;  // softmax - onehot
    const Eigen::MatrixXd gw = z.transpose() * logits / static_cast<double>(n) + cfg.l2 * w;
    const Eigen::RowVectorXd gb = logits.colwise().sum() / static_cast<double>(n);
    w -= cfg.learning_rate * gw;
    b -= cfg.learning_rate * gb;
  }

  std::size_t correct = 0;
  for (std::size_t src : split.test) {
    const Eigen::MatrixXd row = standardize(x.row(static_cast<Eigen::Index>(src)));
    const Eigen::RowVectorXd s = row * w + b;
    Eigen::Index best = 0;
    s.maxCoeff(&best);
    if (static_cast<std::size_t>(best) == ids.at(labels[src])) ++correct;
  }
  return {static_cast<double>(correct) / static_cast<double>(split.test.size()), split.train.size(), split.test.size()};
}

Embeddings embed(const Model& model, const PointCloud& cloud) {
  const FeatureMap d = backbone_forward(frozen(model.online), cloud, model.config.knn_k);
  const auto v = d.values.values();
  const auto rows = static_cast<Eigen::Index>(d.points());
  const auto cols = static_cast<Eigen::Index>(d.channels());
  return Eigen::Map<const Embeddings>(v.data(), rows, cols);
}

LabeledEmbeddings embed_foreground(const Model& model, std::span<const PointCloud> clouds) {
  LabeledEmbeddings out;
  std::vector<Embeddings> parts;
  Eigen::Index rows = 0;
  for (const PointCloud& c : clouds) {
    if (!c.has_labels()) throw DataError("evaluation clouds must carry labels");
    parts.push_back(embed(model, c));
    rows += parts.back().rows();
    for (std::uint32_t l : c.labels()) out.labels.push_back(l > 0 ? 1 : 0);
  }
  if (parts.empty()) throw DataError("no clouds to evaluate");
  out.x.resize(rows, parts[0].cols());
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    out.x.middleRows(at, p.rows()) = p;
    at += p.rows();
  }
  return out;
}

std::string format_variance(const VarianceReport& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "sigma2_intra=%.17g sigma2_inter=%.17g ratio=%.17g degenerate=%d infinite=%d",
                r.sigma2_intra, r.sigma2_inter, r.ratio, r.degenerate ? 1 : 0, r.infinite ? 1 : 0);
  return buf;
}

std::string format_probe(const ProbeResult& r) {
  char buf[128];
  std::snprintf(buf, sizeof buf, "probe_accuracy=%.17g n_train=%zu n_test=%zu", r.accuracy, r.n_train, r.n_test);
  return buf;
}

}  // namespace fac
