#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <string>

#include <nlohmann/json.hpp>

#include "dpn/config.hpp"

namespace dpn {

/// Written as manifest.json next to every run's artifacts.
struct RunManifest {
  std::string subcommand;
  nlohmann::json config;
  std::uint64_t seed = 0;
  std::string build_id;
  std::map<std::string, std::string> outputs;  // role -> file name in out_dir
  std::string started_at;
  std::string finished_at;
  nlohmann::json summary = nlohmann::json::object();
};

void to_json(nlohmann::json& j, const RunManifest& m);

std::string build_id();
/// UTC, ISO-8601 with seconds.
std::string utc_timestamp();

/// Each runner validates `cfg` before any compute, writes its artifacts and
/// manifest.json into out_dir (created if missing) and returns the summary.

/// check.json; summary.passed is false when any suite fails.
nlohmann::json run_check_command(const RunConfig& cfg, const std::filesystem::path& out_dir);

/// losses.csv, ckpt.json + ckpt.bin. Scenes come from scenes_dir (scene JSON
/// files, sorted by name) or are generated when scenes_dir is empty. A
/// diverging step writes diverged_batch.json before the error propagates.
nlohmann::json run_train_command(const RunConfig& cfg, const std::filesystem::path& scenes_dir,
                                 const std::filesystem::path& out_dir);

/// bench.json holding both records and a comparison.
nlohmann::json run_bench_command(const RunConfig& cfg, const std::filesystem::path& out_dir);

/// sweep.csv for one axis over its default grid.
nlohmann::json run_sweep_command(const RunConfig& cfg, const std::string& axis,
                                 const std::filesystem::path& out_dir);

/// scenes/scene_NNNN.json and scenes/scene_NNNN.bin (KITTI layout).
nlohmann::json run_gen_command(const RunConfig& cfg, std::size_t num_scenes,
                               const std::filesystem::path& out_dir);

}  // namespace dpn
