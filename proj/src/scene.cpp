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

#include "fac/scene.hpp"

#include "bytes.hpp"
#include "fac/error.hpp"
#include "fac/rng.hpp"

#include <Eigen/Geometry>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>
#include <string>

namespace fac {

PointCloud::PointCloud(std::vector<Vec3> positions, std::optional<std::vector<Rgb>> colors,
                       std::optional<std::vector<std::uint32_t>> labels)
    : positions_(std::move(positions)), colors_(std::move(colors)), labels_(std::move(labels)) {
  if (positions_.empty()) throw DataError("point cloud is empty");
  for (const Vec3& p : positions_) {
    if (!p.allFinite()) throw DataError("point cloud has a non-finite coordinate");
  }
  if (colors_ && colors_->size() != positions_.size()) {
    throw ArgumentError("color channel length does not match point count");
  }
  if (labels_ && labels_->size() != positions_.size()) {
    throw ArgumentError("label channel length does not match point count");
  }
}

std::span<const Rgb> PointCloud::colors() const noexcept {
  return colors_ ? std::span<const Rgb>(*colors_) : std::span<const Rgb>();
}

std::span<const std::uint32_t> PointCloud::labels() const noexcept {
  return labels_ ? std::span<const std::uint32_t>(*labels_) : std::span<const std::uint32_t>();
}

PointCloud PointCloud::select(std::span<const std::size_t> indices) const {
  std::vector<Vec3> pos;
  pos.reserve(indices.size());
  std::optional<std::vector<Rgb>> col;
  std::optional<std::vector<std::uint32_t>> lab;
  if (colors_) col.emplace().reserve(indices.size());
  if (labels_) lab.emplace().reserve(indices.size());
  for (std::size_t i : indices) {
    if (i >= size()) throw ArgumentError("select: index out of range");
    pos.push_back(positions_[i]);
    if (col) col->push_back((*colors_)[i]);
    if (lab) lab->push_back((*labels_)[i]);
  }
  return PointCloud(std::move(pos), std::move(col), std::move(lab));
}

// ---------------------------------------------------------------------------
// Transforms

void SimilarityTransform::validate() const {
  if (!rotation.allFinite() || !translation.allFinite()) {
    throw ContractError("transform has non-finite entries");
  }
  const double ortho = (rotation.transpose() * rotation - Mat3::Identity()).cwiseAbs().maxCoeff();
  if (ortho >= 1e-9) throw ContractError("rotation is not orthonormal");
  if (rotation.determinant() <= 0.0) throw ContractError("rotation has determinant -1");
  if (!(scale > 0.0) || !std::isfinite(scale)) throw ContractError("scale must be positive");
}

Mat3 SimilarityTransform::linear() const {
  Mat3 flip = Mat3::Identity();
  if (flip_x) flip(0, 0) = -1.0;
  if (flip_y) flip(1, 1) = -1.0;
  return scale * flip * rotation;
}

Vec3 SimilarityTransform::apply(const Vec3& p) const {
  Vec3 q = rotation * p;
  if (flip_x) q.x() = -q.x();
  if (flip_y) q.y() = -q.y();
  return scale * q + translation;
}

Vec3 SimilarityTransform::apply_inverse(const Vec3& q) const {
  Vec3 p = (q - translation) / scale;
  if (flip_x) p.x() = -p.x();
  if (flip_y) p.y() = -p.y();
  return rotation.transpose() * p;
}

Mat3 axis_angle_rotation(const Vec3& axis, double angle_rad) {
  const double norm = axis.norm();
  if (!(norm > 0.0)) throw ArgumentError("rotation axis must be nonzero");
  return Eigen::AngleAxisd(angle_rad, axis / norm).toRotationMatrix();
}

PointCloud apply_transform(const PointCloud& cloud, const SimilarityTransform& t) {
  t.validate();
  std::vector<Vec3> out(cloud.size());
  for (std::size_t i = 0; i < cloud.size(); ++i) out[i] = t.apply(cloud.position(i));
  std::optional<std::vector<Rgb>> colors;
  std::optional<std::vector<std::uint32_t>> labels;
  if (cloud.has_colors()) colors.emplace(cloud.colors().begin(), cloud.colors().end());
  if (cloud.has_labels()) labels.emplace(cloud.labels().begin(), cloud.labels().end());
  return PointCloud(std::move(out), std::move(colors), std::move(labels));
}

// ---------------------------------------------------------------------------
// Voxels

VoxelKey voxel_key(const Vec3& p, double voxel_size) {
  return {static_cast<std::int64_t>(std::floor(p.x() / voxel_size)),
          static_cast<std::int64_t>(std::floor(p.y() / voxel_size)),
          static_cast<std::int64_t>(std::floor(p.z() / voxel_size))};
}

VoxelKey VoxelGrid::key_of(const Vec3& p) const { return voxel_key(p, voxel_size); }

VoxelGrid voxelize(const PointCloud& cloud, double voxel_size) {
  if (!(voxel_size > 0.0) || !std::isfinite(voxel_size)) {
    throw ArgumentError("voxel_size must be positive");
  }
  VoxelGrid grid;
  grid.voxel_size = voxel_size;
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    grid.cells[voxel_key(cloud.position(i), voxel_size)].push_back(i);
  }
  return grid;
}

// ---------------------------------------------------------------------------
// Synthetic scenes

void SceneSpec::validate() const {
  if (!extent.allFinite() || (extent.array() <= 0.0).any()) {
    throw ArgumentError("scene extent must be positive");
  }
  if (n_points < 1) throw ArgumentError("scene needs at least one point");
  if (!(background_fraction > 0.0 && background_fraction < 1.0)) {
    throw ArgumentError("background_fraction must lie in (0, 1)");
  }
  if (n_objects > 0 && n_points - background_points() < n_objects) {
    throw ArgumentError("not enough foreground points for every object");
  }
  if (n_objects > 65535) throw ArgumentError("too many objects for 16-bit labels");
}

std::size_t SceneSpec::background_points() const {
  if (n_objects == 0) return n_points;
  return static_cast<std::size_t>(std::floor(background_fraction * static_cast<double>(n_points)));
}

namespace {

// Largest-remainder split of `total` proportional to `weights`.
std::vector<std::size_t> apportion(std::size_t total, std::span<const double> weights) {
  double sum = 0.0;
  for (double w : weights) sum += w;
  std::vector<std::size_t> out(weights.size());
  std::vector<std::pair<double, std::size_t>> rema;
  std::size_t used = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    const double exact = static_cast<double>(total) * weights[i] / sum;
    out[i] = static_cast<std::size_t>(std::floor(exact));
    used += out[i];
    rema.emplace_back(exact - std::floor(exact), i);
  }
  std::stable_sort(rema.begin(), rema.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t i = 0; used < total; ++i, ++used) ++out[rema[i % rema.size()].second];
  return out;
}

std::size_t pick_weighted(CounterRng& rng, std::span<const double> weights) {
  double sum = 0.0;
  for (double w : weights) sum += w;
  double u = rng.uniform() * sum;
  for (std::size_t i = 0; i + 1 < weights.size(); ++i) {
    if (u < weights[i]) return i;
    u -= weights[i];
  }
  return weights.size() - 1;
}

Vec3 unit_vector(CounterRng& rng) {
  for (;;) {
    Vec3 v(rng.normal(), rng.normal(), rng.normal());
    const double n = v.norm();
    if (n > 1e-12) return v / n;
  }
}

constexpr Rgb kFloorColor{140, 120, 100};
constexpr Rgb kWallColor{200, 200, 195};

Rgb object_color(std::uint32_t label) {
  static constexpr Rgb palette[] = {{220, 60, 60},  {60, 160, 60},  {60, 90, 220},
                                    {230, 180, 40}, {170, 70, 200}, {40, 190, 190}};
  return palette[(label - 1) % std::size(palette)];
}

struct Emitter {
  std::vector<Vec3>& pos;
  std::vector<Rgb>& col;
  std::vector<std::uint32_t>& lab;
  void operator()(const Vec3& p, Rgb c, std::uint32_t l) const {
    pos.push_back(p);
    col.push_back(c);
    lab.push_back(l);
  }
};

void sample_object(CounterRng& rng, const SceneSpec& spec, std::uint32_t label, std::size_t count,
                   const Emitter& emit) {
  const double ex = spec.extent.x();
  const double ey = spec.extent.y();
  const double ez = spec.extent.z();
  const double unit = std::min(ex, ey) / 4.0;
  const int kind = static_cast<int>(rng.below(3));
  const Rgb color = object_color(label);

  // Footprint radius and height, then placement inside the room.
  Vec3 half = Vec3::Zero();
  double radius = 0.0;
  double height = 0.0;
  double footprint = 0.0;
  if (kind == 0) {
    half = Vec3(rng.uniform(0.15, 0.4), rng.uniform(0.15, 0.4), rng.uniform(0.15, 0.4)) * unit;
    half.z() = std::min(half.z(), 0.45 * ez);
    footprint = std::hypot(half.x(), half.y());
    height = 2.0 * half.z();
  } else if (kind == 1) {
    radius = std::min(rng.uniform(0.15, 0.35) * unit, 0.45 * ez);
    footprint = radius;
    height = 2.0 * radius;
  } else {
    radius = rng.uniform(0.1, 0.3) * unit;
    height = std::min(rng.uniform(0.3, 0.9) * unit, 0.9 * ez);
    footprint = radius;
  }
  auto place = [&](double room) {
    const double lim = room / 2.0 - footprint - 0.05 * room;
    return lim > 0.0 ? rng.uniform(-lim, lim) : 0.0;
  };
  const double cx = place(ex);
  const double cy = place(ey);
  const double top_room = std::max(0.0, std::min(0.25 * ez, ez - height));
  const double bottom = rng.uniform(0.0, top_room);

  if (kind == 0) {
    const Mat3 yaw = axis_angle_rotation(Vec3::UnitZ(), rng.uniform(0.0, std::numbers::pi));
    const Vec3 center(cx, cy, bottom + half.z());
    const double face_area[3] = {half.y() * half.z(), half.x() * half.z(), half.x() * half.y()};
    for (std::size_t i = 0; i < count; ++i) {
      const std::size_t axis = pick_weighted(rng, face_area);
      Vec3 local(rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0));
      local[static_cast<Eigen::Index>(axis)] = rng.bernoulli(0.5) ? 1.0 : -1.0;
      emit(center + yaw * local.cwiseProduct(half), color, label);
    }
  } else if (kind == 1) {
    const Vec3 center(cx, cy, bottom + radius);
    for (std::size_t i = 0; i < count; ++i) emit(center + radius * unit_vector(rng), color, label);
  } else {
    const double parts[3] = {2.0 * std::numbers::pi * radius * height,
                             std::numbers::pi * radius * radius,
                             std::numbers::pi * radius * radius};
    for (std::size_t i = 0; i < count; ++i) {
      const std::size_t part = pick_weighted(rng, parts);
      const double theta = rng.uniform(0.0, 2.0 * std::numbers::pi);
      if (part == 0) {
        emit(Vec3(cx + radius * std::cos(theta), cy + radius * std::sin(theta),
                  bottom + rng.uniform(0.0, height)),
             color, label);
      } else {
        const double r = radius * std::sqrt(rng.uniform());
        const double z = part == 1 ? bottom : bottom + height;
        emit(Vec3(cx + r * std::cos(theta), cy + r * std::sin(theta), z), color, label);
      }
    }
  }
}

}  // namespace

PointCloud generate_scene(const SceneSpec& spec) {
  spec.validate();
  CounterRng rng(spec.seed);
  std::vector<Vec3> pos;
  std::vector<Rgb> col;
  std::vector<std::uint32_t> lab;
  pos.reserve(spec.n_points);
  col.reserve(spec.n_points);
  lab.reserve(spec.n_points);
  const Emitter emit{pos, col, lab};

  const double ex = spec.extent.x();
  const double ey = spec.extent.y();
  const double ez = spec.extent.z();
  // floor, wall x-, wall x+, wall y-, wall y+
  const double areas[5] = {ex * ey, ey * ez, ey * ez, ex * ez, ex * ez};
  const std::vector<std::size_t> per_plane = apportion(spec.background_points(), areas);
  CounterRng bg = rng.derive(0);
  for (std::size_t plane = 0; plane < 5; ++plane) {
    for (std::size_t i = 0; i < per_plane[plane]; ++i) {
      const double u = bg.uniform(-0.5, 0.5);
      const double v = bg.uniform(-0.5, 0.5);
      const double h = bg.uniform(0.0, ez);
      switch (plane) {
        case 0: emit(Vec3(u * ex, v * ey, 0.0), kFloorColor, 0); break;
        case 1: emit(Vec3(-ex / 2, u * ey, h), kWallColor, 0); break;
        case 2: emit(Vec3(ex / 2, u * ey, h), kWallColor, 0); break;
        case 3: emit(Vec3(u * ex, -ey / 2, h), kWallColor, 0); break;
        default: emit(Vec3(u * ex, ey / 2, h), kWallColor, 0); break;
      }
    }
  }

  if (spec.n_objects > 0) {
    const std::size_t fg = spec.n_points - spec.background_points();
    for (std::size_t o = 0; o < spec.n_objects; ++o) {
      const std::size_t count = fg / spec.n_objects + (o < fg % spec.n_objects ? 1 : 0);
      CounterRng obj = rng.derive(o + 1);
      sample_object(obj, spec, static_cast<std::uint32_t>(o + 1), count, emit);
    }
  }
  // Round to 32-bit floats so the native format stores every point exactly.
  for (Vec3& p : pos) {
    for (Eigen::Index a = 0; a < 3; ++a) {
      const float f = static_cast<float>(p[a]);
      p[a] = static_cast<double>(f);
    }
  }
  return PointCloud(std::move(pos), std::move(col), std::move(lab));
}

// ---------------------------------------------------------------------------
// File formats

CloudFormat format_from_path(const std::filesystem::path& path) {
  std::string ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  if (ext == ".xyz" || ext == ".txt") return CloudFormat::kXyz;
  if (ext == ".ply") return CloudFormat::kPly;
  return CloudFormat::kNative;
}

namespace {

constexpr std::string_view kNativeMagic = "FACPC1";
constexpr std::uint8_t kFlagColors = 0x1;
constexpr std::uint8_t kFlagLabels = 0x2;

void check_label_range(const PointCloud& cloud) {
  for (std::uint32_t l : cloud.labels()) {
    if (l > 0xFFFF) throw ArgumentError("label does not fit in 16 bits");
  }
}

}  // namespace

std::vector<std::uint8_t> encode_native(const PointCloud& cloud) {
  check_label_range(cloud);
  detail::ByteWriter w;
  w.bytes(kNativeMagic);
  std::uint8_t flags = 0;
  if (cloud.has_colors()) flags |= kFlagColors;
  if (cloud.has_labels()) flags |= kFlagLabels;
  w.u8(flags);
  w.u8(0);
  w.u64(cloud.size());
  for (const Vec3& p : cloud.positions()) {
    w.f32(static_cast<float>(p.x()));
    w.f32(static_cast<float>(p.y()));
    w.f32(static_cast<float>(p.z()));
  }
  for (const Rgb& c : cloud.colors()) {
    w.u8(c.r);
    w.u8(c.g);
    w.u8(c.b);
  }
  for (std::uint32_t l : cloud.labels()) w.u16(static_cast<std::uint16_t>(l));
  return std::move(w.buffer());
}

PointCloud decode_native(std::span<const std::uint8_t> bytes) {
  detail::ByteReader r(bytes);
  if (r.remaining() < 16 || r.bytes(6) != kNativeMagic) throw FormatError("not a FACPC1 file");
  const std::uint8_t flags = r.u8();
  if ((flags & ~(kFlagColors | kFlagLabels)) != 0) throw FormatError("unknown FACPC1 flag bits");
  if (r.u8() != 0) throw FormatError("FACPC1 reserved byte must be zero");
  const std::uint64_t n = r.u64();
  if (n == 0) throw DataError("point cloud is empty");
  std::size_t need = n * 12;
  if (flags & kFlagColors) need += n * 3;
  if (flags & kFlagLabels) need += n * 2;
  if (r.remaining() != need) throw FormatError("FACPC1 payload size does not match header");

  std::vector<Vec3> pos(n);
  for (auto& p : pos) {
    const double x = r.f32();
    const double y = r.f32();
    const double z = r.f32();
    p = Vec3(x, y, z);
  }
  std::optional<std::vector<Rgb>> colors;
  if (flags & kFlagColors) {
    colors.emplace(n);
    for (auto& c : *colors) {
      c.r = r.u8();
      c.g = r.u8();
      c.b = r.u8();
    }
  }
  std::optional<std::vector<std::uint32_t>> labels;
  if (flags & kFlagLabels) {
    labels.emplace(n);
    for (auto& l : *labels) l = r.u16();
  }
  return PointCloud(std::move(pos), std::move(colors), std::move(labels));
}

namespace {

PointCloud read_xyz(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<Vec3> pos;
  std::vector<Rgb> col;
  std::optional<bool> with_color;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream ss(line);
    std::vector<std::string> tok;
    for (std::string t; ss >> t;) tok.push_back(t);
    if (tok.size() != 3 && tok.size() != 6) {
      throw FormatError("xyz line " + std::to_string(lineno) + ": expected 3 or 6 fields");
    }
    const bool has_c = tok.size() == 6;
    if (with_color && *with_color != has_c) {
      throw FormatError("xyz line " + std::to_string(lineno) + ": inconsistent color columns");
    }
    with_color = has_c;
    Vec3 p;
    for (int k = 0; k < 3; ++k) {
      try {
        std::size_t used = 0;
        p[k] = std::stod(tok[k], &used);
        if (used != tok[k].size()) throw std::invalid_argument(tok[k]);
      } catch (const std::out_of_range&) {
        throw DataError("xyz line " + std::to_string(lineno) + ": coordinate out of range");
      } catch (const std::invalid_argument&) {
        throw FormatError("xyz line " + std::to_string(lineno) + ": bad number '" + tok[k] + "'");
      }
    }
    if (!p.allFinite()) throw DataError("xyz line " + std::to_string(lineno) + ": non-finite coordinate");
    pos.push_back(p);
    if (has_c) {
      std::uint8_t c[3];
      for (int k = 0; k < 3; ++k) {
        int v = -1;
        const auto* b = tok[3 + k].data();
        const auto res = std::from_chars(b, b + tok[3 + k].size(), v);
        if (res.ec != std::errc() || res.ptr != b + tok[3 + k].size() || v < 0 || v > 255) {
          throw FormatError("xyz line " + std::to_string(lineno) + ": bad color value");
        }
        c[k] = static_cast<std::uint8_t>(v);
      }
      col.push_back({c[0], c[1], c[2]});
    }
  }
  if (pos.empty()) throw DataError("point cloud is empty");
  std::optional<std::vector<Rgb>> colors;
  if (with_color.value_or(false)) colors = std::move(col);
  return PointCloud(std::move(pos), std::move(colors));
}

void write_xyz(const PointCloud& cloud, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out.precision(17);
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const Vec3& p = cloud.position(i);
    out << p.x() << ' ' << p.y() << ' ' << p.z();
    if (cloud.has_colors()) {
      const Rgb c = cloud.colors()[i];
      out << ' ' << int(c.r) << ' ' << int(c.g) << ' ' << int(c.b);
    }
    out << '\n';
  }
  if (!out) throw IoError("write failed: " + path.string());
}

enum class PlyType { kI8, kU8, kI16, kU16, kI32, kU32, kF32, kF64 };

PlyType parse_ply_type(const std::string& name) {
  if (name == "char" || name == "int8") return PlyType::kI8;
  if (name == "uchar" || name == "uint8") return PlyType::kU8;
  if (name == "short" || name == "int16") return PlyType::kI16;
  if (name == "ushort" || name == "uint16") return PlyType::kU16;
  if (name == "int" || name == "int32") return PlyType::kI32;
  if (name == "uint" || name == "uint32") return PlyType::kU32;
  if (name == "float" || name == "float32") return PlyType::kF32;
  if (name == "double" || name == "float64") return PlyType::kF64;
  throw FormatError("unknown PLY property type '" + name + "'");
}

std::size_t ply_size(PlyType t) {
  switch (t) {
    case PlyType::kI8:
    case PlyType::kU8: return 1;
    case PlyType::kI16:
    case PlyType::kU16: return 2;
    case PlyType::kI32:
    case PlyType::kU32:
    case PlyType::kF32: return 4;
    case PlyType::kF64: return 8;
  }
  return 0;
}

double ply_read(detail::ByteReader& r, PlyType t) {
  switch (t) {
    case PlyType::kI8: return static_cast<std::int8_t>(r.u8());
    case PlyType::kU8: return r.u8();
    case PlyType::kI16: return static_cast<std::int16_t>(r.u16());
    case PlyType::kU16: return r.u16();
    case PlyType::kI32: return static_cast<std::int32_t>(r.u32());
    case PlyType::kU32: return r.u32();
    case PlyType::kF32: return r.f32();
    case PlyType::kF64: return r.f64();
  }
  return 0.0;
}

struct PlyProperty {
  std::string name;
  PlyType type;
};

struct PlyElement {
  std::string name;
  std::size_t count = 0;
  std::vector<PlyProperty> props;
  bool has_list = false;
};

PointCloud read_ply(const std::filesystem::path& path) {
  const std::vector<std::uint8_t> data = detail::read_file_bytes(path);
  // Header is ASCII up to and including "end_header\n".
  const std::string_view all(reinterpret_cast<const char*>(data.data()), data.size());
  const std::size_t end = all.find("end_header");
  if (all.substr(0, 3) != "ply" || end == std::string_view::npos) throw FormatError("not a PLY file");
  std::size_t body = all.find('\n', end);
  if (body == std::string_view::npos) throw FormatError("PLY header not terminated");
  ++body;

  std::istringstream header{std::string(all.substr(0, end))};
  std::vector<PlyElement> elements;
  bool format_ok = false;
  std::string line;
  std::getline(header, line);
  while (std::getline(header, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream ss(line);
    std::string kw;
    ss >> kw;
    if (kw.empty() || kw == "comment" || kw == "obj_info") continue;
    if (kw == "format") {
      std::string fmt;
      ss >> fmt;
      if (fmt != "binary_little_endian") throw FormatError("only binary_little_endian PLY is supported");
      format_ok = true;
    } else if (kw == "element") {
      PlyElement e;
      long long count = -1;
      ss >> e.name >> count;
      if (!ss || count < 0) throw FormatError("bad PLY element line");
      e.count = static_cast<std::size_t>(count);
      elements.push_back(std::move(e));
    } else if (kw == "property") {
      if (elements.empty()) throw FormatError("PLY property before element");
      std::string type;
      ss >> type;
      if (type == "list") {
        elements.back().has_list = true;
        continue;
      }
      std::string name;
      ss >> name;
      if (!ss) throw FormatError("bad PLY property line");
      elements.back().props.push_back({name, parse_ply_type(type)});
    } else {
      throw FormatError("unexpected PLY header keyword '" + kw + "'");
    }
  }
  if (!format_ok) throw FormatError("PLY format line missing");

  detail::ByteReader r(std::span<const std::uint8_t>(data).subspan(body));
  for (const PlyElement& e : elements) {
    if (e.name != "vertex") {
      if (e.has_list) throw FormatError("PLY list element before vertex is not supported");
      std::size_t stride = 0;
      for (const auto& p : e.props) stride += ply_size(p.type);
      r.require(stride * e.count);
      r.bytes(stride * e.count);
      continue;
    }
    if (e.has_list) throw FormatError("PLY vertex lists are not supported");
    int ix = -1, iy = -1, iz = -1, ir = -1, ig = -1, ib = -1, il = -1;
    for (std::size_t k = 0; k < e.props.size(); ++k) {
      const std::string& n = e.props[k].name;
      const int kk = static_cast<int>(k);
      if (n == "x") ix = kk;
      else if (n == "y") iy = kk;
      else if (n == "z") iz = kk;
      else if (n == "red") ir = kk;
      else if (n == "green") ig = kk;
      else if (n == "blue") ib = kk;
      else if (n == "label") il = kk;
    }
    if (ix < 0 || iy < 0 || iz < 0) throw FormatError("PLY vertex lacks x/y/z");
    const bool with_color = ir >= 0 && ig >= 0 && ib >= 0;
    if (e.count == 0) throw DataError("point cloud is empty");
    std::vector<Vec3> pos(e.count);
    std::optional<std::vector<Rgb>> colors;
    std::optional<std::vector<std::uint32_t>> labels;
    if (with_color) colors.emplace(e.count);
    if (il >= 0) labels.emplace(e.count);
    std::vector<double> row(e.props.size());
    for (std::size_t i = 0; i < e.count; ++i) {
      for (std::size_t k = 0; k < e.props.size(); ++k) row[k] = ply_read(r, e.props[k].type);
      pos[i] = Vec3(row[ix], row[iy], row[iz]);
      if (!pos[i].allFinite()) throw DataError("PLY vertex has a non-finite coordinate");
      if (colors) {
        (*colors)[i] = {static_cast<std::uint8_t>(row[ir]), static_cast<std::uint8_t>(row[ig]),
                        static_cast<std::uint8_t>(row[ib])};
      }
      if (labels) (*labels)[i] = static_cast<std::uint32_t>(row[il]);
    }
    return PointCloud(std::move(pos), std::move(colors), std::move(labels));
  }
  throw FormatError("PLY file has no vertex element");
}

void write_ply(const PointCloud& cloud, const std::filesystem::path& path) {
  check_label_range(cloud);
  std::ostringstream h;
  h << "ply\nformat binary_little_endian 1.0\nelement vertex " << cloud.size() << "\n"
    << "property float x\nproperty float y\nproperty float z\n";
  if (cloud.has_colors()) h << "property uchar red\nproperty uchar green\nproperty uchar blue\n";
  if (cloud.has_labels()) h << "property ushort label\n";
  h << "end_header\n";
  detail::ByteWriter w;
  w.bytes(h.str());
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const Vec3& p = cloud.position(i);
    w.f32(static_cast<float>(p.x()));
    w.f32(static_cast<float>(p.y()));
    w.f32(static_cast<float>(p.z()));
    if (cloud.has_colors()) {
      const Rgb c = cloud.colors()[i];
      w.u8(c.r);
      w.u8(c.g);
      w.u8(c.b);
    }
    if (cloud.has_labels()) w.u16(static_cast<std::uint16_t>(cloud.labels()[i]));
  }
  detail::write_file_bytes(path, w.buffer());
}

}  // namespace

PointCloud read_cloud(const std::filesystem::path& path, CloudFormat format) {
  if (!std::filesystem::exists(path)) throw IoError("no such file: " + path.string());
  switch (format) {
    case CloudFormat::kXyz: return read_xyz(path);
    case CloudFormat::kPly: return read_ply(path);
    case CloudFormat::kNative: return decode_native(detail::read_file_bytes(path));
  }
  throw ArgumentError("unknown cloud format");
}

void write_cloud(const PointCloud& cloud, const std::filesystem::path& path, CloudFormat format) {
  switch (format) {
    case CloudFormat::kXyz: write_xyz(cloud, path); return;
    case CloudFormat::kPly: write_ply(cloud, path); return;
    case CloudFormat::kNative: detail::write_file_bytes(path, encode_native(cloud)); return;
  }
  throw ArgumentError("unknown cloud format");
}

}  // namespace fac
