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

#include "CLI11.hpp"

#include "fac/error.hpp"
#include "fac/eval.hpp"
#include "fac/gradcheck.hpp"
#include "fac/model.hpp"
#include "fac/overseg.hpp"
#include "fac/rng.hpp"
#include "fac/sampling.hpp"
#include "fac/scene.hpp"
#include "fac/train.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;

namespace {

constexpr int kOk = 0;
constexpr int kUsage = 1;
constexpr int kData = 2;
constexpr int kNumeric = 3;

// Expands "key = value" lines of every --config file into --key=value tokens
// placed right after the verb, so that explicit flags, coming later, win.
std::vector<std::string> expand_config(int argc, char** argv) {
  std::vector<std::string> args(argv, argv + argc);
  if (args.size() < 2) return args;
  std::vector<std::string> injected;
  for (std::size_t i = 2; i < args.size(); ++i) {
    std::string path;
    if (args[i] == "--config" && i + 1 < args.size()) {
      path = args[i + 1];
    } else if (args[i].rfind("--config=", 0) == 0) {
      path = args[i].substr(9);
    } else {
      continue;
    }
    std::ifstream in(path);
    if (!in) throw fac::ArgumentError("cannot read config file " + path);
    std::stringstream text;
    text << in.rdbuf();
    for (const auto& [file_key, value] : fac::parse_key_values(text.str())) {
      std::string key = file_key;
      for (char& ch : key) {
        if (ch == '_') ch = '-';
      }
      if (key == "config") throw fac::ArgumentError("config files cannot include other config files");
      injected.push_back("--" + key + "=" + value);
    }
  }
  args.insert(args.begin() + 2, injected.begin(), injected.end());
  return args;
}

void echo_config(const CLI::App& sub) {
  std::cout << "# resolved configuration: " << sub.get_name() << '\n';
  for (const CLI::Option* opt : sub.get_options()) {
    const std::string name = opt->get_single_name();
    if (name.empty() || name == "help" || name == "config") continue;
    std::string value;
    if (opt->count() > 0) {
      value = opt->results().back();
      if (opt->get_expected_min() == 0 && (value.empty() || value == "1")) value = "true";
    } else {
      value = opt->get_default_str();
      if (opt->get_expected_min() == 0 && value.empty()) value = "false";
    }
    std::cout << name << " = " << value << '\n';
  }
  std::cout << "# end configuration" << std::endl;
}

struct Common {
  std::uint64_t seed = 0;
  std::string out;
  std::size_t threads = 1;
  std::string config;
};

void add_common(CLI::App* sub, Common& c, bool needs_out) {
  sub->add_option("--config", c.config, "flat 'key = value' file; flags override it");
  sub->add_option("--seed", c.seed, "seed of all randomness");
  auto* out = sub->add_option("--out", c.out, "output directory");
  if (needs_out) out->required();
  sub->add_option("--threads", c.threads, "worker cap")->check(CLI::PositiveNumber);
}

std::string scene_file_name(std::size_t i, fac::CloudFormat f) {
  char buf[64];
  const char* ext = f == fac::CloudFormat::kPly ? "ply" : f == fac::CloudFormat::kXyz ? "xyz" : "facpc";
  std::snprintf(buf, sizeof buf, "scene_%04zu.%s", i, ext);
  return buf;
}

std::vector<std::size_t> parse_widths(const std::string& s) {
  std::vector<std::size_t> out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) {
    try {
      std::size_t used = 0;
      const unsigned long v = std::stoul(item, &used);
      if (used != item.size()) throw std::invalid_argument(item);
      out.push_back(v);
    } catch (const std::exception&) {
      throw fac::ArgumentError("bad layer width list '" + s + "'");
    }
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Foreground-aware contrastive pre-training for point clouds"};
  app.require_subcommand(1);
  app.option_defaults()->always_capture_default()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);

  Common common;

  // synth
  auto* synth = app.add_subcommand("synth", "generate labeled synthetic rooms");
  std::size_t n_scenes = 8;
  fac::SceneSpec spec;
  std::string format = "native";
  synth->add_option("--scenes", n_scenes)->check(CLI::PositiveNumber);
  synth->add_option("--points", spec.n_points);
  synth->add_option("--objects", spec.n_objects);
  synth->add_option("--background-fraction", spec.background_fraction);
  synth->add_option("--format", format)->check(CLI::IsMember({"native", "ply", "xyz"}));
  add_common(synth, common, true);

  // overseg
  auto* overseg = app.add_subcommand("overseg", "over-segment a cloud and score its regions");
  std::string overseg_in;
  fac::OversegParams oparams;
  double height_band = 0.1;
  overseg->add_option("--in", overseg_in)->required();
  overseg->add_option("--voxel-size", oparams.voxel_size);
  overseg->add_option("--normal-k", oparams.normal_k);
  overseg->add_option("--max-angle", oparams.max_normal_angle_deg);
  overseg->add_option("--min-points", oparams.min_region_points);
  overseg->add_option("--height-band", height_band);
  add_common(overseg, common, true);

  // pretrain
  auto* pretrain = app.add_subcommand("pretrain", "run contrastive pre-training");
  fac::TrainConfig tc;
  std::string data_dir, variant = "fac", scores, hidden = "32,32";
  std::size_t k_opt = 0;
  pretrain->add_option("--data", data_dir)->required();
  pretrain->add_option("--variant", variant)->check(CLI::IsMember({"fac", "facpp"}));
  pretrain->add_option("--scores", scores, "score file, or directory of <scene>.scores files");
  pretrain->add_option("--steps", tc.steps);
  pretrain->add_option("--batch", tc.batch_size);
  pretrain->add_option("--lr", tc.lr);
  pretrain->add_option("--regions", tc.regions_per_view);
  pretrain->add_option("--threshold", tc.prompt_threshold);
  pretrain->add_option("--height-band", tc.height_band);
  pretrain->add_option("--tau", tc.loss.tau);
  pretrain->add_option("--k", k_opt, "pairs per anchor; 0 derives it from the pair budget");
  pretrain->add_option("--pair-budget", tc.loss.total_pair_budget);
  pretrain->add_option("--alpha", tc.loss.alpha);
  pretrain->add_option("--beta", tc.loss.beta);
  pretrain->add_option("--sinkhorn-epsilon", tc.loss.sinkhorn_epsilon);
  pretrain->add_option("--sinkhorn-iters", tc.loss.sinkhorn_iters);
  pretrain->add_option("--n-sample", tc.augment.n_sample);
  pretrain->add_option("--overlap-ratio", tc.augment.overlap_ratio);
  pretrain->add_option("--rotation-range", tc.augment.rotation_range_deg);
  pretrain->add_option("--scale-min", tc.augment.scale_min);
  pretrain->add_option("--scale-max", tc.augment.scale_max);
  pretrain->add_option("--flip-prob", tc.augment.flip_prob);
  pretrain->add_option("--voxel-size", tc.overseg.voxel_size);
  pretrain->add_option("--normal-k", tc.overseg.normal_k);
  pretrain->add_option("--max-angle", tc.overseg.max_normal_angle_deg);
  pretrain->add_option("--min-points", tc.overseg.min_region_points);
  pretrain->add_option("--f-c", tc.model.f_c);
  pretrain->add_option("--m", tc.model.m);
  pretrain->add_option("--hidden", hidden, "comma-separated backbone widths");
  pretrain->add_option("--knn-k", tc.model.knn_k);
  pretrain->add_option("--ema-momentum", tc.model.ema_momentum);
  pretrain->add_option("--checkpoint-every", tc.checkpoint_every);
  add_common(pretrain, common, true);

  // eval
  auto* eval = app.add_subcommand("eval", "variance statistics and linear probe of a checkpoint");
  std::string ckpt, eval_data;
  bool do_probe = false, do_variance = false;
  std::uint64_t split_seed = 0;
  fac::ProbeConfig probe_cfg;
  eval->add_option("--ckpt", ckpt)->required();
  eval->add_option("--data", eval_data)->required();
  eval->add_flag("--probe", do_probe);
  eval->add_flag("--variance", do_variance);
  eval->add_option("--split-seed", split_seed);
  eval->add_option("--probe-epochs", probe_cfg.epochs);
  add_common(eval, common, false);

  // gradcheck
  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference checks of every backward rule");
  bool all_checks = false;
  std::string only;
  std::size_t instances = 5;
  gradcheck->add_flag("--all", all_checks);
  gradcheck->add_option("--check", only, "run checks whose name contains this text");
  gradcheck->add_option("--instances", instances)->check(CLI::PositiveNumber);
  add_common(gradcheck, common, false);

  // corr
  auto* corr = app.add_subcommand("corr", "point correlation map of a query point");
  std::string corr_ckpt, corr_cloud;
  std::size_t query = 0;
  corr->add_option("--ckpt", corr_ckpt)->required();
  corr->add_option("--cloud", corr_cloud)->required();
  corr->add_option("--query", query);
  add_common(corr, common, true);

  try {
    std::vector<std::string> args = expand_config(argc, argv);
    std::vector<const char*> cargs;
    for (const auto& a : args) cargs.push_back(a.c_str());
    app.parse(static_cast<int>(cargs.size()), cargs.data());
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    std::cerr << app.help();
    return kUsage;
  } catch (const fac::ArgumentError& e) {
    std::cerr << "fac: " << e.what() << '\n';
    return kUsage;
  }

  try {
    if (*synth) {
      echo_config(*synth);
      const fac::CloudFormat f = format == "ply" ? fac::CloudFormat::kPly
                                 : format == "xyz" ? fac::CloudFormat::kXyz
                                                   : fac::CloudFormat::kNative;
      fs::create_directories(common.out);
      const fac::CounterRng root(common.seed);
      for (std::size_t i = 0; i < n_scenes; ++i) {
        fac::SceneSpec s = spec;
        s.seed = root.derive(i).next_u64();
        fac::write_cloud(fac::generate_scene(s), fs::path(common.out) / scene_file_name(i, f), f);
      }
      std::cout << "scenes=" << n_scenes << " out=" << common.out << '\n';
      return kOk;
    }

    if (*overseg) {
      echo_config(*overseg);
      const fs::path in(overseg_in);
      const fac::PointCloud cloud = fac::read_cloud(in, fac::format_from_path(in));
      const fac::Segmentation seg = fac::oversegment(cloud, oparams);
      const auto scores = fac::score_foreground(fac::HeuristicScorer(height_band), cloud, seg);
      fs::create_directories(common.out);
      const fs::path stem = fs::path(common.out) / in.stem();
      fac::write_segmentation(seg, fs::path(stem.string() + ".seg"));
      fac::write_scores(scores, fs::path(stem.string() + ".scores"));
      std::cout << "points=" << cloud.size() << " regions=" << seg.n_regions << '\n';
      return kOk;
    }

    if (*pretrain) {
      echo_config(*pretrain);
      tc.data_dir = data_dir;
      tc.variant = fac::parse_variant(variant);
      tc.scores = scores;
      tc.threads = common.threads;
      tc.seed = common.seed;
      tc.model.seed = common.seed;
      tc.model.backbone_hidden = parse_widths(hidden);
      tc.loss.k = k_opt > 0 ? k_opt : fac::LossConfig::k_from_budget(tc.loss.total_pair_budget, tc.regions_per_view);
      tc.validate();
      const fac::TrainResult res = fac::pretrain(tc, common.out);
      const fac::StepReport& last = res.reports.back();
      std::cout << "steps=" << res.reports.size() << " final_l_sum=" << last.l_sum
                << " checkpoint=" << res.final_checkpoint.string() << '\n';
      return kOk;
    }

    if (*eval) {
      echo_config(*eval);
      if (!do_probe && !do_variance) do_probe = do_variance = true;
      const fac::Model model = fac::load_model(ckpt);
      std::vector<fac::PointCloud> clouds;
      for (auto& [name, cloud] : fac::load_scenes(eval_data)) clouds.push_back(std::move(cloud));
      const fac::LabeledEmbeddings le = fac::embed_foreground(model, clouds);
      if (do_variance) std::cout << fac::format_variance(fac::class_variance(le.x, le.labels)) << '\n';
      if (do_probe) std::cout << fac::format_probe(fac::linear_probe(le.x, le.labels, split_seed, probe_cfg)) << '\n';
      return kOk;
    }

    if (*gradcheck) {
      echo_config(*gradcheck);
      if (!all_checks && only.empty()) {
        std::cerr << "fac gradcheck: pass --all or --check <name>\n" << gradcheck->help();
        return kUsage;
      }
      const auto outcomes = fac::run_gradchecks(instances, common.seed, all_checks ? std::string() : only);
      if (outcomes.empty()) {
        std::cerr << "fac gradcheck: no check matches '" << only << "'\n";
        return kUsage;
      }
      bool ok = true;
      for (const auto& o : outcomes) {
        std::printf("check=%s instances=%zu max_rel_err=%.3e threshold=%.0e pass=%d\n", o.name.c_str(), o.instances,
                    o.worst_rel_err, o.threshold, o.passed ? 1 : 0);
        ok = ok && o.passed;
      }
      std::fflush(stdout);
      return ok ? kOk : kNumeric;
    }

    if (*corr) {
      echo_config(*corr);
      const fac::Model model = fac::load_model(corr_ckpt);
      const fs::path in(corr_cloud);
      const fac::PointCloud cloud = fac::read_cloud(in, fac::format_from_path(in));
      const auto map = fac::correlation_map(fac::embed(model, cloud), query);
      fs::create_directories(common.out);
      const fs::path dst = fs::path(common.out) / (in.stem().string() + ".corr");
      fac::write_correlation(map, dst);
      std::cout << "query=" << query << " points=" << map.size() << " out=" << dst.string() << '\n';
      return kOk;
    }
  } catch (const fac::ArgumentError& e) {
    std::cerr << "fac: " << e.what() << '\n';
    return kUsage;
  } catch (const fac::NumericError& e) {
    std::cerr << "fac: numeric failure: " << e.what() << '\n';
    return kNumeric;
  } catch (const std::exception& e) {
    std::cerr << "fac: " << e.what() << '\n';
    return kData;
  }
  return kUsage;
}
