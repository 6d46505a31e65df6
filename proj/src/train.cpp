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

#include "fac/train.hpp"

#include "fac/error.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <thread>

namespace fac {

using ad::Tensor;

Variant parse_variant(const std::string& name) {
  if (name == "fac") return Variant::kFac;
  if (name == "facpp") return Variant::kFacpp;
  throw ArgumentError("unknown variant '" + name + "' (expected fac or facpp)");
}

std::string variant_name(Variant v) { return v == Variant::kFac ? "fac" : "facpp"; }

void TrainConfig::validate() const {
  if (!(lr > 0.0) || !std::isfinite(lr)) throw ArgumentError("lr must be positive");
  if (steps < 1) throw ArgumentError("steps must be at least 1");
  if (batch_size < 1) throw ArgumentError("batch_size must be at least 1");
  if (regions_per_view < 1) throw ArgumentError("regions_per_view must be at least 1");
  if (threads < 1) throw ArgumentError("threads must be at least 1");
  if (!std::isfinite(prompt_threshold)) throw ArgumentError("prompt_threshold must be finite");
  if (!(height_band > 0.0)) throw ArgumentError("height_band must be positive");
  loss.validate();
  model.validate();
  augment.validate();
  overseg.validate();
  if (augment.n_sample % model.m != 0) {
    throw ArgumentError("n_sample " + std::to_string(augment.n_sample) + " is not divisible by m " +
                        std::to_string(model.m));
  }
}

std::string train_config_text(const TrainConfig& c) {
  std::ostringstream s;
  s.precision(17);
  s << "lr = " << c.lr << '\n'
    << "batch = " << c.batch_size << '\n'
    << "steps = " << c.steps << '\n'
    << "variant = " << variant_name(c.variant) << '\n'
    << "regions = " << c.regions_per_view << '\n'
    << "threshold = " << c.prompt_threshold << '\n'
    << "height_band = " << c.height_band << '\n'
    << "tau = " << c.loss.tau << '\n'
    << "k = " << c.loss.k << '\n'
    << "alpha = " << c.loss.alpha << '\n'
    << "beta = " << c.loss.beta << '\n'
    << "sinkhorn_epsilon = " << c.loss.sinkhorn_epsilon << '\n'
    << "sinkhorn_iters = " << c.loss.sinkhorn_iters << '\n'
    << "n_sample = " << c.augment.n_sample << '\n'
    << "overlap_ratio = " << c.augment.overlap_ratio << '\n'
    << "rotation_range = " << c.augment.rotation_range_deg << '\n'
    << "scale_min = " << c.augment.scale_min << '\n'
    << "scale_max = " << c.augment.scale_max << '\n'
    << "flip_prob = " << c.augment.flip_prob << '\n'
    << "voxel_size = " << c.overseg.voxel_size << '\n'
    << "normal_k = " << c.overseg.normal_k << '\n'
    << "max_normal_angle = " << c.overseg.max_normal_angle_deg << '\n'
    << "min_region_points = " << c.overseg.min_region_points << '\n'
    << "checkpoint_every = " << c.checkpoint_every << '\n'
    << "seed = " << c.seed << '\n';
  return s.str();
}

std::string step_header() {
  return "step\tl_geo\tl_fea\tl_sum\tskipped_regions\tgrad_norm\twall_ms\tresampled_pools";
}

std::string format_step(const StepReport& r) {
  char buf[512];
  std::snprintf(buf, sizeof buf, "%zu\t%.17g\t%.17g\t%.17g\t%zu\t%.17g\t%.3f\t%zu", r.step, r.l_geo, r.l_fea, r.l_sum,
                r.skipped_regions, r.grad_norm, r.wall_ms, r.resampled_pools);
  return buf;
}

std::vector<Tensor> sgd_step(std::span<const Tensor> params, std::span<const std::vector<double>> grads, double lr) {
  if (params.size() != grads.size()) throw ShapeError("one gradient per parameter is required");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads[i].size() != params[i].numel()) throw ShapeError("gradient shape does not match its parameter");
    for (double g : grads[i]) {
      if (!std::isfinite(g)) throw NumericError("non-finite gradient; update rejected");
    }
  }
  std::vector<Tensor> out;
  out.reserve(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto v = params[i].values();
    std::vector<double> next(v.size());
    for (std::size_t j = 0; j < v.size(); ++j) next[j] = v[j] - lr * grads[i][j];
    out.push_back(Tensor::parameter(params[i].shape(), std::move(next)));
  }
  return out;
}

PreparedScene prepare_scene(std::string name, PointCloud cloud, const TrainConfig& cfg,
                            const ForegroundScorer* scorer) {
  Segmentation seg = oversegment(cloud, cfg.overseg);
  RegionStats stats = region_stats(cloud, seg);
  RegionSelection selection;
  if (cfg.variant == Variant::kFac) {
    selection = sample_median_regions(stats, cfg.regions_per_view);
  } else {
    if (scorer == nullptr) throw ArgumentError("the facpp variant needs a foreground scorer");
    const auto scores = score_foreground(*scorer, cloud, seg);
    selection = select_prompted_regions(scores, stats, cfg.regions_per_view, cfg.prompt_threshold);
  }
  return {std::move(name), std::move(cloud), std::move(seg), std::move(stats), std::move(selection)};
}

SceneLoss scene_loss(const Model& model, const PreparedScene& scene, const TrainConfig& cfg,
                     std::uint64_t augment_seed, CounterRng loss_rng) {
  AugmentConfig aug = cfg.augment;
  aug.seed = augment_seed;
  const ViewPair views = make_view_pair(scene.cloud, aug);
  const ViewRegions ra = view_regions(transport_regions(scene.segmentation, views.source_index_a), scene.selection);
  const ViewRegions rb = view_regions(transport_regions(scene.segmentation, views.source_index_b), scene.selection);

  const FeatureMap d_a = backbone_forward(model.online, views.view_a, model.config.knn_k);
  const FeatureMap d_b = backbone_forward(model.target, views.view_b, model.config.knn_k);
  const FeatureMap e_a = reshape_grid(d_a, views.view_a.positions(), model.config.m);
  const FeatureMap e_b = reshape_grid(d_b, views.view_b.positions(), model.config.m);
  const ScnOutput scn = scn_forward(model.projector, e_a, e_b);

  const GeoResult geo = loss_geo(d_a.values, d_b.values, ra, rb, cfg.loss, loss_rng.derive(0));
  const FeaResult fea = match_and_loss_fea(scn.f_a.values, scn.f_b.values, ra, rb, cfg.loss, loss_rng.derive(1));
  SceneLoss out;
  out.l_geo = geo.loss;
  out.l_fea = fea.loss;
  out.l_sum = loss_sum(geo.loss, fea.loss, cfg.loss.alpha, cfg.loss.beta);
  out.skipped = geo.skipped + fea.skipped;
  out.resampled = geo.resampled || fea.resampled;
  return out;
}

std::vector<std::pair<std::string, PointCloud>> load_scenes(const std::filesystem::path& dir) {
  std::error_code ec;
  if (!std::filesystem::is_directory(dir, ec)) throw DataError("data directory not found: " + dir.string());
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    const auto ext = entry.path().extension();
    if (entry.is_regular_file() && (ext == ".facpc" || ext == ".ply" || ext == ".xyz" || ext == ".txt")) {
      files.push_back(entry.path());
    }
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw DataError("no point-cloud files in " + dir.string());
  std::vector<std::pair<std::string, PointCloud>> out;
  for (const auto& f : files) {
    try {
      out.emplace_back(f.stem().string(), read_cloud(f, format_from_path(f)));
    } catch (const DataError&) {
      throw;
    } catch (const Error& e) {
      throw DataError("cannot read " + f.string() + ": " + e.what());
    }
  }
  return out;
}

namespace {

struct SlotResult {
  bool ok = false;
  double l_geo = 0.0;
  double l_fea = 0.0;
  std::size_t skipped = 0;
  bool resampled = false;
  std::vector<std::vector<double>> grads;
};

std::vector<Tensor> trainable(const Model& m) {
  std::vector<Tensor> out;
  for (const auto& [name, t] : named(m.online)) out.push_back(t);
  for (const auto& [name, t] : named(m.projector)) out.push_back(t);
  return out;
}

std::unique_ptr<ForegroundScorer> scorer_for(const TrainConfig& cfg, const std::string& scene_name) {
  if (cfg.scores.empty()) return std::make_unique<HeuristicScorer>(cfg.height_band);
  if (std::filesystem::is_directory(cfg.scores)) {
    return std::make_unique<FileScorer>(cfg.scores / (scene_name + ".scores"));
  }
  return std::make_unique<FileScorer>(cfg.scores);
}

std::string checkpoint_extra(const TrainConfig& cfg, std::size_t step) {
  return train_config_text(cfg) + "step = " + std::to_string(step) + '\n';
}

}  // namespace

TrainResult pretrain(const TrainConfig& cfg, const std::vector<std::pair<std::string, PointCloud>>& scenes,
                     const std::filesystem::path& out_dir) {
  cfg.validate();
  if (scenes.empty()) throw DataError("no scenes to train on");
  std::filesystem::create_directories(out_dir);

  std::vector<PreparedScene> prepared;
  prepared.reserve(scenes.size());
  for (const auto& [name, cloud] : scenes) {
    std::unique_ptr<ForegroundScorer> scorer;
    if (cfg.variant == Variant::kFacpp) scorer = scorer_for(cfg, name);
    prepared.push_back(prepare_scene(name, cloud, cfg, scorer.get()));
  }

  ModelConfig mcfg = cfg.model;
  Model model = init_model(mcfg);
  save_model(model, out_dir / "init.ckpt", checkpoint_extra(cfg, 0));

  std::ofstream log(out_dir / "train.log", std::ios::trunc);
  if (!log) throw IoError("cannot write " + (out_dir / "train.log").string());
  log << '#' << step_header() << '\n';

  // Scene of global slot g: position g % S of the shuffled order of epoch g / S.
  const CounterRng root(cfg.seed);
  const std::size_t S = prepared.size();
  std::vector<std::size_t> epoch_order;
  std::size_t epoch_loaded = SIZE_MAX;
  auto scene_of_slot = [&](std::size_t g) {
    const std::size_t epoch = g / S;
    if (epoch != epoch_loaded) {
      epoch_order.resize(S);
      for (std::size_t i = 0; i < S; ++i) epoch_order[i] = i;
      CounterRng r = root.derive(0x45504F43ULL).derive(epoch);
      r.shuffle(std::span<std::size_t>(epoch_order));
      epoch_loaded = epoch;
    }
    return epoch_order[g % S];
  };

  TrainResult result;
  const std::size_t B = cfg.batch_size;
  for (std::size_t step = 1; step <= cfg.steps; ++step) {
    const auto t0 = std::chrono::steady_clock::now();
    std::vector<std::size_t> slot_scene(B);
    for (std::size_t b = 0; b < B; ++b) slot_scene[b] = scene_of_slot((step - 1) * B + b);

    std::vector<SlotResult> slots(B);
    const std::vector<Tensor> params = trainable(model);
    auto run_slot = [&](std::size_t b) {
      const CounterRng slot_rng = root.derive(0x53544550ULL).derive(step).derive(b);
      SlotResult& out = slots[b];
      try {
        const SceneLoss loss = scene_loss(model, prepared[slot_scene[b]], cfg, slot_rng.derive(0).next_u64(),
                                          slot_rng.derive(1));
        const ad::Gradients grads = ad::backward(loss.l_sum);
        out.l_geo = loss.l_geo.item();
        out.l_fea = loss.l_fea.item();
        out.skipped = loss.skipped;
        out.resampled = loss.resampled;
        out.grads.reserve(params.size());
        for (const Tensor& p : params) out.grads.push_back(grads.of(p));
        out.ok = true;
      } catch (const ContractError&) {
        out.ok = false;
        out.skipped = cfg.regions_per_view * 2;
      }
    };
    if (cfg.threads <= 1 || B == 1) {
      for (std::size_t b = 0; b < B; ++b) run_slot(b);
    } else {
      std::vector<std::thread> workers;
      std::vector<std::exception_ptr> errors(cfg.threads);
      const std::size_t W = std::min(cfg.threads, B);
      for (std::size_t w = 0; w < W; ++w) {
        workers.emplace_back([&, w] {
          try {
            for (std::size_t b = w; b < B; b += W) run_slot(b);
          } catch (...) {
            errors[w] = std::current_exception();
          }
        });
      }
      for (auto& t : workers) t.join();
      for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
      }
    }

    // Deterministic reduction in slot order.
    StepReport rep;
    rep.step = step;
    std::size_t used = 0;
    std::vector<std::vector<double>> grads(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) grads[i].assign(params[i].numel(), 0.0);
    double geo = 0.0, fea = 0.0;
    for (const SlotResult& s : slots) {
      rep.skipped_regions += s.skipped;
      rep.resampled_pools += s.resampled ? 1 : 0;
      if (!s.ok) continue;
      ++used;
      geo += s.l_geo;
      fea += s.l_fea;
      for (std::size_t i = 0; i < params.size(); ++i) {
        for (std::size_t j = 0; j < grads[i].size(); ++j) grads[i][j] += s.grads[i][j];
      }
    }
    if (used == 0) {
      rep.skipped = true;
    } else {
      const double inv = 1.0 / static_cast<double>(used);
      rep.l_geo = geo * inv;
      rep.l_fea = fea * inv;
      rep.l_sum = cfg.loss.alpha * rep.l_geo + cfg.loss.beta * rep.l_fea;
      double sq = 0.0;
      for (auto& g : grads) {
        for (double& v : g) {
          v *= inv;
          sq += v * v;
        }
      }
      rep.grad_norm = std::sqrt(sq);
      try {
        const std::vector<Tensor> next = sgd_step(params, grads, cfg.lr);
        const std::size_t nb = named(model.online).size();
        model.online = with_tensors(model.online, std::span<const Tensor>(next).first(nb));
        model.projector = with_tensors(model.projector, std::span<const Tensor>(next).subspan(nb));
        model.target = ema_update(model.target, model.online, model.config.ema_momentum);
      } catch (const NumericError&) {
        rep.skipped = true;
      }
    }
    rep.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    log << format_step(rep) << '\n';
    log.flush();
    result.reports.push_back(rep);

    if (cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0 && step != cfg.steps) {
      char name[32];
      std::snprintf(name, sizeof name, "step_%06zu.ckpt", step);
      save_model(model, out_dir / name, checkpoint_extra(cfg, step));
    }
  }
  result.final_checkpoint = out_dir / "final.ckpt";
  save_model(model, result.final_checkpoint, checkpoint_extra(cfg, cfg.steps));
  result.model = std::move(model);
  return result;
}

TrainResult pretrain(const TrainConfig& cfg, const std::filesystem::path& out_dir) {
  return pretrain(cfg, load_scenes(cfg.data_dir), out_dir);
}

}  // namespace fac
