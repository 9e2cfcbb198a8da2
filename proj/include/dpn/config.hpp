#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "dpn/model.hpp"
#include "dpn/pointcloud.hpp"
#include "dpn/train.hpp"

namespace dpn {

struct BenchSettings {
  std::size_t points = 16384;
  std::size_t seeds = 4096;
  std::size_t reps = 20;
  std::size_t warmup = 2;
  std::size_t clouds = 1;
  bool include_compute = false;
};

struct SweepSettings {
  std::size_t epochs = 2;
  std::size_t scenes = 20;
  std::size_t eval_scenes = 5;
  std::size_t bench_reps = 5;
};

/// Everything a CLI run resolves to. Serialised as one flat JSON object; the
/// backbone's rng_seed is the single root of all randomness.
struct RunConfig {
  std::string preset = "desk";
  DetectorConfig detector;
  TrainOptions train;
  bool aux_heads = true;
  std::size_t num_scenes = 50;
  std::size_t eval_scenes = 10;
  SceneSpec scene;
  BenchSettings bench;
  SweepSettings sweep;

  std::uint64_t seed() const noexcept { return detector.backbone.rng_seed; }
  /// Detector config with aux_heads applied.
  DetectorConfig resolved_detector() const;
  void validate() const;
};

/// Desk-scale defaults: 2,048 points, 256 seeds, narrow MLPs, lr 1e-3.
RunConfig desk_preset();
/// Stage-1 training scale: 16,384 points, 4,096 seeds, widths 32..256, Adam lr 0.01.
RunConfig paper_preset();
RunConfig preset(std::string_view name);

nlohmann::json to_json(const RunConfig& c);
/// Applies the keys of `j` on top of `base`. A "preset" key is applied first.
/// Unknown keys are a validation error.
/// Malformed JSON in a file is a format error.
RunConfig apply_json(const RunConfig& base, const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path, const RunConfig& base);

}  // namespace dpn
