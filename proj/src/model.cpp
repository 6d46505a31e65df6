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

#include "fac/model.hpp"

#include "bytes.hpp"
#include "fac/error.hpp"
#include "fac/rng.hpp"
#include "fac/spatial.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace fac {

using ad::Tensor;

void ModelConfig::validate() const {
  if (f_c < 1) throw ArgumentError("f_c must be positive");
  if (m < 1) throw ArgumentError("m must be positive");
  if (backbone_hidden.empty()) throw ArgumentError("backbone needs at least one hidden layer");
  for (std::size_t w : backbone_hidden) {
    if (w < 1) throw ArgumentError("hidden widths must be positive");
  }
  if (knn_k < 1) throw ArgumentError("knn_k must be positive");
  if (!(ema_momentum >= 0.0 && ema_momentum <= 1.0)) throw ArgumentError("ema_momentum must lie in [0, 1]");
}

Tensor Linear::operator()(const Tensor& x) const { return ad::add(ad::matmul(x, weight), bias); }

// --- parameter containers ------------------------------------------------------

NamedTensors named(const BackboneParams& p, const std::string& prefix) {
  NamedTensors out;
  for (std::size_t l = 0; l < p.mlp.size(); ++l) {
    out.emplace_back(prefix + ".mlp" + std::to_string(l) + ".weight", p.mlp[l].weight);
    out.emplace_back(prefix + ".mlp" + std::to_string(l) + ".bias", p.mlp[l].bias);
  }
  out.emplace_back(prefix + ".head.weight", p.head.weight);
  out.emplace_back(prefix + ".head.bias", p.head.bias);
  return out;
}

NamedTensors named(const ProjectorParams& p, const std::string& prefix) {
  return {{prefix + ".first.weight", p.first.weight},
          {prefix + ".first.bias", p.first.bias},
          {prefix + ".second.weight", p.second.weight},
          {prefix + ".second.bias", p.second.bias}};
}

namespace {

void check_same_shapes(const NamedTensors& old, std::span<const Tensor> fresh) {
  if (old.size() != fresh.size()) throw ShapeError("parameter count mismatch");
  for (std::size_t i = 0; i < old.size(); ++i) {
    if (old[i].second.shape() != fresh[i].shape()) {
      throw ShapeError("parameter " + old[i].first + " has shape " + ad::shape_string(old[i].second.shape()) +
                       ", got " + ad::shape_string(fresh[i].shape()));
    }
  }
}

Linear init_linear(std::size_t in, std::size_t out, CounterRng rng) {
  std::vector<double> w(in * out);
  const double sd = std::sqrt(2.0 / static_cast<double>(in));
  for (double& v : w) v = sd * rng.normal();
  return {Tensor::parameter({in, out}, std::move(w)), Tensor::parameter({1, out}, std::vector<double>(out, 0.0))};
}

}  // namespace

BackboneParams with_tensors(const BackboneParams& p, std::span<const Tensor> t) {
  check_same_shapes(named(p), t);
  BackboneParams q;
  std::size_t i = 0;
  for (std::size_t l = 0; l < p.mlp.size(); ++l, i += 2) q.mlp.push_back({t[i], t[i + 1]});
  q.head = {t[i], t[i + 1]};
  return q;
}

ProjectorParams with_tensors(const ProjectorParams& p, std::span<const Tensor> t) {
  check_same_shapes(named(p), t);
  return {{t[0], t[1]}, {t[2], t[3]}};
}

BackboneParams init_backbone(const ModelConfig& cfg) {
  cfg.validate();
  const CounterRng rng = CounterRng(cfg.seed).derive(1);
  BackboneParams p;
  std::size_t in = 3;
  for (std::size_t l = 0; l < cfg.backbone_hidden.size(); ++l) {
    p.mlp.push_back(init_linear(in, cfg.backbone_hidden[l], rng.derive(l)));
    in = cfg.backbone_hidden[l];
  }
  p.head = init_linear(2 * in, cfg.f_c, rng.derive(1000));
  return p;
}

ProjectorParams init_projector(const ModelConfig& cfg) {
  cfg.validate();
  const CounterRng rng = CounterRng(cfg.seed).derive(2);
  return {init_linear(cfg.f_c, cfg.f_c, rng.derive(0)), init_linear(cfg.f_c, cfg.f_c, rng.derive(1))};
}

BackboneParams frozen(const BackboneParams& p) {
  std::vector<Tensor> t;
  for (const auto& [name, tensor] : named(p)) t.push_back(tensor.detach());
  return with_tensors(p, t);
}

// --- feature maps -----------------------------------------------------------------

std::size_t FeatureMap::points() const { return values.numel() / channels(); }

std::size_t FeatureMap::channels() const { return values.shape().back(); }

Tensor FeatureMap::rows() const {
  if (layout == Layout::kPoint) return values;
  return ad::reshape(values, {points(), channels()});
}

FeatureMap backbone_forward(const BackboneParams& params, const PointCloud& view, std::size_t knn_k) {
  const std::size_t n = view.size();
  if (n < knn_k) throw ArgumentError("view has fewer points than knn_k");
  std::vector<double> xyz(n * 3);
  for (std::size_t i = 0; i < n; ++i) {
    for (int a = 0; a < 3; ++a) xyz[i * 3 + a] = view.position(i)[a];
  }
  Tensor h = Tensor::constant({n, 3}, std::move(xyz));
  for (const Linear& layer : params.mlp) h = ad::relu(layer(h));

  const KnnIndex index(view.positions());
  const auto table = index.all_nearest(knn_k);
  const Tensor agg = ad::group_mean_rows(h, ad::RowGroups::from_table(table, knn_k));
  const Tensor out = ad::l2_normalize_rows(params.head(ad::concat_cols(h, agg)));
  return {Layout::kPoint, out, {}, 0};
}

// --- Morton reshape -----------------------------------------------------------------

namespace {

std::uint32_t spread_bits(std::uint32_t v) {
  v &= 0x3FF;
  v = (v | (v << 16)) & 0x030000FF;
  v = (v | (v << 8)) & 0x0300F00F;
  v = (v | (v << 4)) & 0x030C30C3;
  v = (v | (v << 2)) & 0x09249249;
  return v;
}

}  // namespace

std::uint32_t morton_code(std::uint32_t ix, std::uint32_t iy, std::uint32_t iz) {
  return spread_bits(ix) | (spread_bits(iy) << 1) | (spread_bits(iz) << 2);
}

std::array<std::uint32_t, 3> morton_cell(const Vec3& p, const Vec3& lo, double cell) {
  std::array<std::uint32_t, 3> out{};
  for (int a = 0; a < 3; ++a) {
    const double q = cell > 0.0 ? std::floor((p[a] - lo[a]) / cell) : 0.0;
    out[a] = static_cast<std::uint32_t>(std::clamp(q, 0.0, 1023.0));
  }
  return out;
}

std::vector<std::size_t> morton_order(std::span<const Vec3> positions) {
  const std::size_t n = positions.size();
  std::vector<std::size_t> order(n);
  if (n == 0) return order;
  Vec3 lo = positions[0], hi = positions[0];
  for (const Vec3& p : positions) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  const double cell = (hi - lo).maxCoeff() / 1024.0;
  std::vector<std::uint32_t> code(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto c = morton_cell(positions[i], lo, cell);
    code[i] = morton_code(c[0], c[1], c[2]);
    order[i] = i;
  }
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return code[a] < code[b] || (code[a] == code[b] && a < b); });
  return order;
}

FeatureMap reshape_grid(const FeatureMap& points, std::span<const Vec3> positions, std::size_t m) {
  if (points.layout != Layout::kPoint) throw ShapeError("reshape_grid expects a point-layout map");
  const std::size_t n = points.points();
  const std::size_t c = points.channels();
  if (positions.size() != n) throw ShapeError("positions do not match the feature rows");
  if (m == 0 || n % m != 0) {
    throw ShapeError(std::to_string(n) + " points cannot be folded into " + std::to_string(m) + " grid rows");
  }
  FeatureMap grid;
  grid.layout = Layout::kGrid;
  grid.order = morton_order(positions);
  grid.m = m;
  grid.values = ad::reshape(ad::gather_rows(points.values, grid.order), {m, n / m, c});
  return grid;
}

FeatureMap unreshape_grid(const FeatureMap& grid) {
  if (grid.layout != Layout::kGrid) throw ShapeError("unreshape_grid expects a grid-layout map");
  const std::size_t n = grid.points();
  if (grid.order.size() != n) throw ShapeError("grid order does not match its rows");
  std::vector<std::size_t> inverse(n);
  for (std::size_t r = 0; r < n; ++r) inverse[grid.order[r]] = r;
  return {Layout::kPoint, ad::gather_rows(grid.rows(), inverse), {}, 0};
}

ScnOutput scn_forward(const ProjectorParams& params, const FeatureMap& e_a, const FeatureMap& e_b) {
  if (e_a.layout != Layout::kGrid || e_b.layout != Layout::kGrid) {
    throw ShapeError("scn_forward expects grid-layout maps");
  }
  if (e_a.values.shape() != e_b.values.shape()) throw ShapeError("view grids differ in shape");
  if (params.first.weight.dim(0) != e_a.channels()) throw ShapeError("projector width does not match features");
  ScnOutput out;
  auto run = [&](const FeatureMap& e, FeatureMap& s, FeatureMap& h, FeatureMap& f) {
    const Tensor rows = e.rows();
    const Tensor score = ad::sigmoid(params.second(ad::relu(params.first(rows))));
    const Tensor gated = ad::mul(rows, score);
    s = {Layout::kGrid, ad::reshape(score, e.values.shape()), e.order, e.m};
    h = {Layout::kGrid, ad::reshape(gated, e.values.shape()), e.order, e.m};
    f = unreshape_grid(h);
  };
  run(e_a, out.s_a, out.h_a, out.f_a);
  run(e_b, out.s_b, out.h_b, out.f_b);
  return out;
}

BackboneParams ema_update(const BackboneParams& target, const BackboneParams& online, double momentum) {
  if (!(momentum >= 0.0 && momentum <= 1.0)) throw ArgumentError("momentum must lie in [0, 1]");
  const NamedTensors t = named(target);
  const NamedTensors o = named(online);
  if (t.size() != o.size()) throw ShapeError("EMA parameter sets differ");
  std::vector<Tensor> next;
  next.reserve(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (t[i].second.shape() != o[i].second.shape()) throw ShapeError("EMA shape mismatch at " + t[i].first);
    const auto tv = t[i].second.values();
    const auto ov = o[i].second.values();
    std::vector<double> v(tv.size());
    for (std::size_t j = 0; j < v.size(); ++j) v[j] = momentum * tv[j] + (1.0 - momentum) * ov[j];
    next.push_back(Tensor::constant(t[i].second.shape(), std::move(v)));
  }
  return with_tensors(target, next);
}

Model init_model(const ModelConfig& cfg) {
  Model model;
  model.config = cfg;
  model.online = init_backbone(cfg);
  model.target = frozen(model.online);
  model.projector = init_projector(cfg);
  return model;
}

// --- checkpoints -------------------------------------------------------------------

namespace {
constexpr std::string_view kCkptMagic = "FACCK1";
}

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
  detail::ByteWriter w;
  w.bytes(kCkptMagic);
  w.u16(0);
  w.u64(ckpt.config_text.size());
  w.bytes(ckpt.config_text);
  w.u64(ckpt.entries.size());
  for (const auto& [name, entry] : ckpt.entries) {
    const auto& [shape, values] = entry;
    if (values.size() != ad::numel_of(shape)) throw ShapeError("checkpoint entry " + name + " is inconsistent");
    w.u32(static_cast<std::uint32_t>(name.size()));
    w.bytes(name);
    w.u32(static_cast<std::uint32_t>(shape.size()));
    for (std::size_t d : shape) w.u64(d);
    for (double v : values) w.f64(v);
  }
  return std::move(w.buffer());
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  detail::ByteReader r(bytes);
  if (bytes.size() < 8 || r.bytes(6) != kCkptMagic) throw FormatError("not a FACCK1 checkpoint");
  r.u16();
  Checkpoint ckpt;
  const std::uint64_t text_len = r.u64();
  r.require(text_len);
  ckpt.config_text = r.bytes(text_len);
  const std::uint64_t n = r.u64();
  for (std::uint64_t e = 0; e < n; ++e) {
    const std::uint32_t len = r.u32();
    std::string name = r.bytes(len);
    const std::uint32_t rank = r.u32();
    if (rank > 8) throw FormatError("checkpoint entry rank too large");
    ad::Shape shape(rank);
    for (auto& d : shape) d = r.u64();
    const std::size_t count = ad::numel_of(shape);
    if (count > r.remaining() / 8) throw FormatError("checkpoint entry " + name + " is truncated");
    std::vector<double> values(count);
    for (double& v : values) v = r.f64();
    ckpt.entries.emplace_back(std::move(name), std::make_pair(std::move(shape), std::move(values)));
  }
  if (r.remaining() != 0) throw FormatError("trailing bytes after checkpoint entries");
  return ckpt;
}

std::string model_config_text(const ModelConfig& cfg) {
  std::ostringstream s;
  s.precision(17);
  s << "f_c = " << cfg.f_c << '\n' << "m = " << cfg.m << '\n' << "backbone_hidden = ";
  for (std::size_t i = 0; i < cfg.backbone_hidden.size(); ++i) s << (i ? "," : "") << cfg.backbone_hidden[i];
  s << '\n'
    << "knn_k = " << cfg.knn_k << '\n'
    << "ema_momentum = " << cfg.ema_momentum << '\n'
    << "model_seed = " << cfg.seed << '\n';
  return s.str();
}

std::map<std::string, std::string> parse_key_values(const std::string& text) {
  std::map<std::string, std::string> out;
  std::istringstream in(text);
  std::string line;
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return std::string();
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
  };
  while (std::getline(in, line)) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    out[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return out;
}

void save_model(const Model& model, const std::filesystem::path& path, const std::string& extra_config) {
  Checkpoint ckpt;
  ckpt.config_text = model_config_text(model.config) + extra_config;
  auto add = [&](const NamedTensors& set) {
    for (const auto& [name, t] : set) {
      ckpt.entries.emplace_back(name, std::make_pair(t.shape(), std::vector<double>(t.values().begin(), t.values().end())));
    }
  };
  add(named(model.online, "backbone"));
  add(named(model.projector, "projector"));
  add(named(model.target, "target"));
  detail::write_file_bytes(path, encode_checkpoint(ckpt));
}

namespace {

std::size_t to_size(const std::map<std::string, std::string>& kv, const std::string& key) {
  auto it = kv.find(key);
  if (it == kv.end()) throw FormatError("checkpoint config lacks " + key);
  try {
    std::size_t used = 0;
    const unsigned long long v = std::stoull(it->second, &used);
    if (used != it->second.size()) throw FormatError("bad value for " + key);
    return static_cast<std::size_t>(v);
  } catch (const std::logic_error&) {
    throw FormatError("bad value for " + key);
  }
}

}  // namespace

Model load_model(const std::filesystem::path& path) {
  std::filesystem::path p = path;
  if (!std::filesystem::exists(p) && p.extension() != ".ckpt") p += ".ckpt";
  const Checkpoint ckpt = decode_checkpoint(detail::read_file_bytes(p));
  const auto kv = parse_key_values(ckpt.config_text);

  ModelConfig cfg;
  cfg.f_c = to_size(kv, "f_c");
  cfg.m = to_size(kv, "m");
  cfg.knn_k = to_size(kv, "knn_k");
  cfg.backbone_hidden.clear();
  {
    auto it = kv.find("backbone_hidden");
    if (it == kv.end()) throw FormatError("checkpoint config lacks backbone_hidden");
    std::istringstream s(it->second);
    std::string item;
    while (std::getline(s, item, ',')) cfg.backbone_hidden.push_back(to_size({{"w", item}}, "w"));
  }
  try {
    cfg.ema_momentum = std::stod(kv.at("ema_momentum"));
    cfg.seed = std::stoull(kv.at("model_seed"));
    cfg.validate();
  } catch (const std::exception& e) {
    throw FormatError(std::string("bad checkpoint config: ") + e.what());
  }

  // Shapes come from a freshly initialized model of the same configuration.
  Model model = init_model(cfg);
  std::map<std::string, const std::pair<ad::Shape, std::vector<double>>*> by_name;
  for (const auto& [name, entry] : ckpt.entries) by_name[name] = &entry;
  auto restore = [&](const NamedTensors& set, bool trainable) {
    std::vector<Tensor> out;
    for (const auto& [name, t] : set) {
      auto it = by_name.find(name);
      if (it == by_name.end()) throw FormatError("checkpoint lacks " + name);
      if (it->second->first != t.shape()) throw FormatError("checkpoint entry " + name + " has the wrong shape");
      out.push_back(trainable ? Tensor::parameter(t.shape(), it->second->second)
                              : Tensor::constant(t.shape(), it->second->second));
    }
    return out;
  };
  model.online = with_tensors(model.online, restore(named(model.online, "backbone"), true));
  model.projector = with_tensors(model.projector, restore(named(model.projector, "projector"), true));
  model.target = with_tensors(model.target, restore(named(model.target, "target"), false));
  if (by_name.size() != named(model.online).size() + named(model.projector).size() + named(model.target).size()) {
    throw FormatError("checkpoint has unexpected entries");
  }
  return model;
}

}  // namespace fac
