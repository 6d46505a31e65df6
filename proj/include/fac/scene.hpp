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

#include <Eigen/Core>

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <vector>

namespace fac {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

struct Rgb {
  std::uint8_t r = 0;
  std::uint8_t g = 0;
  std::uint8_t b = 0;
  friend bool operator==(const Rgb&, const Rgb&) = default;
};

/// N >= 1 points in meters with optional per-point colors and labels.
/// Immutable after construction.
class PointCloud {
 public:
  /// Throws DataError on empty or non-finite input, ArgumentError when the
  /// optional channels do not have exactly N entries.
  explicit PointCloud(std::vector<Vec3> positions,
                      std::optional<std::vector<Rgb>> colors = std::nullopt,
                      std::optional<std::vector<std::uint32_t>> labels = std::nullopt);

  [[nodiscard]] std::size_t size() const noexcept { return positions_.size(); }
  [[nodiscard]] std::span<const Vec3> positions() const noexcept { return positions_; }
  [[nodiscard]] const Vec3& position(std::size_t i) const { return positions_[i]; }

  [[nodiscard]] bool has_colors() const noexcept { return colors_.has_value(); }
  [[nodiscard]] bool has_labels() const noexcept { return labels_.has_value(); }
  [[nodiscard]] std::span<const Rgb> colors() const noexcept;
  [[nodiscard]] std::span<const std::uint32_t> labels() const noexcept;

  /// Subset in the given order; channels follow the points.
  [[nodiscard]] PointCloud select(std::span<const std::size_t> indices) const;

  friend bool operator==(const PointCloud&, const PointCloud&) = default;

 private:
  std::vector<Vec3> positions_;
  std::optional<std::vector<Rgb>> colors_;
  std::optional<std::vector<std::uint32_t>> labels_;
};

/// p' = scale * F * R * p + translation, F = diag(flip_x ? -1 : 1, flip_y ? -1 : 1, 1).
struct SimilarityTransform {
  Mat3 rotation = Mat3::Identity();
  double scale = 1.0;
  bool flip_x = false;
  bool flip_y = false;
  Vec3 translation = Vec3::Zero();

  /// Throws ContractError unless rotation is orthonormal with det +1 and scale > 0.
  void validate() const;
  [[nodiscard]] Mat3 linear() const;
  [[nodiscard]] Vec3 apply(const Vec3& p) const;
  [[nodiscard]] Vec3 apply_inverse(const Vec3& q) const;
};

/// Rodrigues rotation; axis need not be normalized but must be nonzero.
[[nodiscard]] Mat3 axis_angle_rotation(const Vec3& axis, double angle_rad);

[[nodiscard]] PointCloud apply_transform(const PointCloud& cloud, const SimilarityTransform& t);

using VoxelKey = std::array<std::int64_t, 3>;

struct VoxelGrid {
  double voxel_size = 0.0;
  /// Ordered by key so iteration order is deterministic.
  std::map<VoxelKey, std::vector<std::size_t>> cells;

  [[nodiscard]] VoxelKey key_of(const Vec3& p) const;
};

[[nodiscard]] VoxelKey voxel_key(const Vec3& p, double voxel_size);
[[nodiscard]] VoxelGrid voxelize(const PointCloud& cloud, double voxel_size);

struct SceneSpec {
  Vec3 extent{4.0, 4.0, 2.5};
  std::size_t n_points = 2048;
  std::size_t n_objects = 5;
  double background_fraction = 0.7;
  std::uint64_t seed = 0;

  void validate() const;
  [[nodiscard]] std::size_t background_points() const;
};

/// Room (floor plus four walls, label 0) with boxes, spheres and cylinders
/// labeled 1..n_objects. Surface samples only. Coordinates are z-up meters,
/// the room is centered on the origin in x/y with its floor at z = 0, and
/// every coordinate is exactly representable as a 32-bit float.
[[nodiscard]] PointCloud generate_scene(const SceneSpec& spec);

enum class CloudFormat { kXyz, kPly, kNative };

/// Guesses from the extension: .xyz/.txt, .ply, anything else is native.
[[nodiscard]] CloudFormat format_from_path(const std::filesystem::path& path);

[[nodiscard]] PointCloud read_cloud(const std::filesystem::path& path, CloudFormat format);
void write_cloud(const PointCloud& cloud, const std::filesystem::path& path, CloudFormat format);

/// Native encoding in memory; write_cloud(kNative) writes exactly these bytes.
[[nodiscard]] std::vector<std::uint8_t> encode_native(const PointCloud& cloud);
[[nodiscard]] PointCloud decode_native(std::span<const std::uint8_t> bytes);

}  // namespace fac
