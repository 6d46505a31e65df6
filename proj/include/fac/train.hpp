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

#include "fac/augment.hpp"
#include "fac/loss.hpp"
#include "fac/model.hpp"
#include "fac/overseg.hpp"
#include "fac/sampling.hpp"

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace fac {

enum class Variant { kFac, kFacpp };

[[nodiscard]] Variant parse_variant(const std::string& name);
[[nodiscard]] std::string variant_name(Variant v);

struct TrainConfig {
  double lr = 0.1;
  std::size_t batch_size = 4;
  std::size_t steps = 500;
  std::filesystem::path data_dir;
  Variant variant = Variant::kFac;
  /// Regions sampled per scene (H).
  std::size_t regions_per_view = 20;
  /// Minimum foreground score for prompted sampling.
  double prompt_threshold = 0.5;
  /// Per-scene "<stem>.scores" files in a directory, or one file for every
  /// scene. Empty selects the heuristic scorer.
  std::filesystem::path scores;
  double height_band = 0.1;
  LossConfig loss;
  ModelConfig model;
  AugmentConfig augment;
  OversegParams overseg;
  /// 0 writes only the initial and final checkpoints.
  std::size_t checkpoint_every = 100;
  std::size_t threads = 1;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Recorded keys; paths are excluded so that checkpoints do not depend on
/// where a run was written.
[[nodiscard]] std::string train_config_text(const TrainConfig& cfg);

struct StepReport {
  std::size_t step = 0;
  double l_geo = 0.0;
  double l_fea = 0.0;
  double l_sum = 0.0;
  std::size_t skipped_regions = 0;
  double grad_norm = 0.0;
  double wall_ms = 0.0;
  /// Scenes whose key pools were smaller than k and were drawn with replacement.
  std::size_t resampled_pools = 0;
  /// No scene of the step produced a loss, or the update was rejected.
  bool skipped = false;
};

/// One tab-separated line in field order, without a trailing newline.
[[nodiscard]] std::string format_step(const StepReport& r);
[[nodiscard]] std::string step_header();

/// theta - lr * g per tensor, as new leaves requiring gradients. Throws
/// NumericError when a gradient entry is not finite, ShapeError on mismatch.
[[nodiscard]] std::vector<ad::Tensor> sgd_step(std::span<const ad::Tensor> params,
                                               std::span<const std::vector<double>> grads, double lr);

/// A scene with its over-segmentation and region selection, computed once.
struct PreparedScene {
  std::string name;
  PointCloud cloud;
  Segmentation segmentation;
  RegionStats stats;
  RegionSelection selection;
};

[[nodiscard]] PreparedScene prepare_scene(std::string name, PointCloud cloud, const TrainConfig& cfg,
                                          const ForegroundScorer* scorer);

/// Loss of one scene under the current parameters.
struct SceneLoss {
  ad::Tensor l_geo;
  ad::Tensor l_fea;
  ad::Tensor l_sum;
  std::size_t skipped = 0;
  bool resampled = false;
};

[[nodiscard]] SceneLoss scene_loss(const Model& model, const PreparedScene& scene, const TrainConfig& cfg,
                                   std::uint64_t augment_seed, CounterRng loss_rng);

struct TrainResult {
  std::filesystem::path final_checkpoint;
  std::vector<StepReport> reports;
  Model model;
};

/// Reads every point-cloud file (.facpc, .ply, .xyz, .txt) of a directory in
/// name order. Throws DataError when none can be found or one cannot be read.
[[nodiscard]] std::vector<std::pair<std::string, PointCloud>> load_scenes(const std::filesystem::path& dir);

/// Full pre-training run over in-memory scenes, writing init.ckpt,
/// step_NNNNNN.ckpt, final.ckpt and train.log under out_dir.
[[nodiscard]] TrainResult pretrain(const TrainConfig& cfg, const std::vector<std::pair<std::string, PointCloud>>& scenes,
                                   const std::filesystem::path& out_dir);
/// Same, reading scenes from cfg.data_dir.
[[nodiscard]] TrainResult pretrain(const TrainConfig& cfg, const std::filesystem::path& out_dir);

}  // namespace fac
