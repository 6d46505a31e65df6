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
#include "fac/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace fac {

struct ModelConfig {
  std::size_t f_c = 20;
  std::size_t m = 20;
  std::vector<std::size_t> backbone_hidden{32, 32};
  std::size_t knn_k = 16;
  double ema_momentum = 0.999;
  std::uint64_t seed = 0;

  void validate() const;
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Affine layer y = x W + b with W [in, out] and b [1, out].
struct Linear {
  ad::Tensor weight;
  ad::Tensor bias;

  [[nodiscard]] ad::Tensor operator()(const ad::Tensor& x) const;
};

/// Per-point MLP on xyz, one k-NN mean aggregation, then a linear head to
/// f_c channels applied to [h, mean_knn(h)].
struct BackboneParams {
  std::vector<Linear> mlp;
  Linear head;
};

/// Two point-wise layers with a ReLU in between, f_c -> f_c -> f_c.
struct ProjectorParams {
  Linear first;
  Linear second;
};

/// Named view of a parameter container, in a fixed order.
using NamedTensors = std::vector<std::pair<std::string, ad::Tensor>>;

[[nodiscard]] NamedTensors named(const BackboneParams& p, const std::string& prefix = "backbone");
[[nodiscard]] NamedTensors named(const ProjectorParams& p, const std::string& prefix = "projector");
/// Same structure with new tensors, taken in named() order.
[[nodiscard]] BackboneParams with_tensors(const BackboneParams& p, std::span<const ad::Tensor> tensors);
[[nodiscard]] ProjectorParams with_tensors(const ProjectorParams& p, std::span<const ad::Tensor> tensors);

/// Weights ~ N(0, 2 / fan_in), zero biases, all requiring gradients.
[[nodiscard]] BackboneParams init_backbone(const ModelConfig& cfg);
[[nodiscard]] ProjectorParams init_projector(const ModelConfig& cfg);

/// Same values with requires_grad off.
[[nodiscard]] BackboneParams frozen(const BackboneParams& p);

enum class Layout { kPoint, kGrid };

/// Point layout holds an [N, f_c] tensor in point order. Grid layout holds an
/// [m, N/m, f_c] tensor whose rows, read in row-major order, are the points
/// listed in `order`.
struct FeatureMap {
  Layout layout = Layout::kPoint;
  ad::Tensor values;
  std::vector<std::size_t> order;
  std::size_t m = 0;

  [[nodiscard]] std::size_t points() const;
  [[nodiscard]] std::size_t channels() const;
  /// [N, f_c] rows in the layout's own order.
  [[nodiscard]] ad::Tensor rows() const;
};

/// Output rows are l2-normalized. Throws ArgumentError when the view has fewer
/// points than knn_k.
[[nodiscard]] FeatureMap backbone_forward(const BackboneParams& params, const PointCloud& view,
                                          std::size_t knn_k);

/// 30-bit z-order code with x in bit 0, y in bit 1, z in bit 2 of each triple.
[[nodiscard]] std::uint32_t morton_code(std::uint32_t ix, std::uint32_t iy, std::uint32_t iz);
/// Coordinates quantized to 1024 cubic cells spanning the largest bounding-box
/// extent; each axis starts at its own minimum.
[[nodiscard]] std::array<std::uint32_t, 3> morton_cell(const Vec3& p, const Vec3& lo, double cell);
/// Point indices sorted by (Morton code, index).
[[nodiscard]] std::vector<std::size_t> morton_order(std::span<const Vec3> positions);

/// Throws ShapeError unless N is divisible by m.
[[nodiscard]] FeatureMap reshape_grid(const FeatureMap& points, std::span<const Vec3> positions,
                                      std::size_t m);
[[nodiscard]] FeatureMap unreshape_grid(const FeatureMap& grid);

struct ScnOutput {
  FeatureMap s_a, s_b;  // scores, grid layout
  FeatureMap h_a, h_b;  // gated features, grid layout
  FeatureMap f_a, f_b;  // gated features, point layout
};

/// S = sigmoid(h(E)) per grid cell, H = E * S, F = H back in point order.
[[nodiscard]] ScnOutput scn_forward(const ProjectorParams& params, const FeatureMap& e_a,
                                    const FeatureMap& e_b);

/// momentum * target + (1 - momentum) * online, as constants.
[[nodiscard]] BackboneParams ema_update(const BackboneParams& target, const BackboneParams& online,
                                        double momentum);

struct Model {
  ModelConfig config;
  BackboneParams online;
  BackboneParams target;
  ProjectorParams projector;
};

[[nodiscard]] Model init_model(const ModelConfig& cfg);

/// "FACCK1" file: magic, u16 reserved, u64 length + config text, u64 entry
/// count, then per entry u32 length + name, u32 rank, rank x u64 dims and the
/// f64 payload. All little-endian.
struct Checkpoint {
  std::string config_text;
  std::vector<std::pair<std::string, std::pair<ad::Shape, std::vector<double>>>> entries;
};

[[nodiscard]] std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
[[nodiscard]] Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);

/// `extra_config` is appended to the model keys in the config echo.
void save_model(const Model& model, const std::filesystem::path& path, const std::string& extra_config = {});
/// Resolves a missing ".ckpt" extension. Throws FormatError on malformed files.
[[nodiscard]] Model load_model(const std::filesystem::path& path);

/// "key = value" lines of the model keys.
[[nodiscard]] std::string model_config_text(const ModelConfig& cfg);
/// Keys and values of "key = value" lines; '#' starts a comment.
[[nodiscard]] std::map<std::string, std::string> parse_key_values(const std::string& text);

}  // namespace fac
