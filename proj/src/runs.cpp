#include "dpn/runs.hpp"

#include <algorithm>
#include <cmath>
#include <ctime>
#include <fstream>
#include <sstream>
#include <vector>

#include "dpn/bench.hpp"
#include "dpn/checks.hpp"
#include "dpn/error.hpp"
#include "dpn/model.hpp"
#include "dpn/rng.hpp"
#include "dpn/sampling.hpp"
#include "dpn/train.hpp"

#ifndef DPN_BUILD_ID
#define DPN_BUILD_ID "unknown"
#endif

namespace fs = std::filesystem;

namespace dpn {
namespace {

constexpr const char* kManifestFile = "manifest.json";

void prepare_dir(const fs::path& dir) {
  require(!dir.empty(), ErrorCode::InvalidArgument, "output directory not set");
  std::error_code ec;
  fs::create_directories(dir, ec);
  require(!ec && fs::is_directory(dir), ErrorCode::Io,
          "cannot create output directory " + dir.string());
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(out.good(), ErrorCode::Io, "cannot write " + path.string());
  out << text;
  require(out.good(), ErrorCode::Io, "short write to " + path.string());
}

RunManifest start_manifest(const std::string& subcommand, const RunConfig& cfg) {
  RunManifest m;
  m.subcommand = subcommand;
  m.config = to_json(cfg);
  m.seed = cfg.seed();
  m.build_id = build_id();
  m.started_at = utc_timestamp();
  return m;
}

void finish_manifest(RunManifest& m, const fs::path& dir, const nlohmann::json& summary) {
  m.summary = summary;
  m.finished_at = utc_timestamp();
  nlohmann::json j = m;
  write_text(dir / kManifestFile, j.dump(2) + "\n");
}

std::string format_double(double v) {
  std::ostringstream os;
  os.precision(12);
  os << v;
  return os.str();
}

std::vector<SyntheticScene> load_scenes(const fs::path& dir) {
  require(fs::is_directory(dir), ErrorCode::Io, "scenes directory not found: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".json") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  require(!files.empty(), ErrorCode::InvalidArgument, "no scene files in " + dir.string());
  std::vector<SyntheticScene> scenes;
  for (const fs::path& f : files) {
    std::ifstream in(f);
    nlohmann::json j;
    try {
      in >> j;
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorCode::Format, f.string() + ": " + e.what());
    }
    scenes.push_back(scene_from_json(j));
  }
  return scenes;
}

}  // namespace

void to_json(nlohmann::json& j, const RunManifest& m) {
  j = nlohmann::json{{"subcommand", m.subcommand},
                     {"config", m.config},
                     {"seed", m.seed},
                     {"build_id", m.build_id},
                     {"outputs", m.outputs},
                     {"started_at", m.started_at},
                     {"finished_at", m.finished_at},
                     {"summary", m.summary}};
}

std::string build_id() { return DPN_BUILD_ID; }

std::string utc_timestamp() {
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

nlohmann::json run_check_command(const RunConfig& cfg, const fs::path& out_dir) {
  cfg.validate();
  prepare_dir(out_dir);
  RunManifest m = start_manifest("check", cfg);
  CheckOptions opts;
  opts.seed = cfg.seed();
  const CheckReport report = run_checks(cfg, opts);
  nlohmann::json j = report.to_json();
  j["manifest"] = kManifestFile;
  write_text(out_dir / "check.json", j.dump(2) + "\n");
  m.outputs["checks"] = "check.json";
  const nlohmann::json summary{{"passed", report.passed()},
                               {"failures", report.failures()},
                               {"checks", report.results.size()},
                               {"text", report.to_text()}};
  finish_manifest(m, out_dir, summary);
  return summary;
}

nlohmann::json run_train_command(const RunConfig& cfg, const fs::path& scenes_dir,
                                 const fs::path& out_dir) {
  cfg.validate();
  prepare_dir(out_dir);
  RunManifest m = start_manifest("train", cfg);
  const std::size_t threads = env_thread_cap();
  const std::vector<SyntheticScene> scenes =
      scenes_dir.empty() ? make_scenes(cfg.scene, cfg.num_scenes, cfg.seed(), threads)
                         : load_scenes(scenes_dir);
  const DetectorConfig det_cfg = cfg.resolved_detector();
  Detector det = Detector::init(det_cfg, 3 + scenes.front().cloud.feature_dim(), cfg.seed());

  std::ofstream losses(out_dir / "losses.csv", std::ios::binary | std::ios::trunc);
  require(losses.good(), ErrorCode::Io, "cannot write losses.csv");
  bool header = false;
  auto on_step = [&](const StepRecord& r) {
    if (!header) {
      losses << "step,scene,total";
      for (const HeadLoss& h : r.loss.heads)
        losses << "," << h.name << ".cls," << h.name << ".reg";
      losses << "\r\n";
      header = true;
    }
    losses << r.step << "," << r.scene << "," << format_double(r.loss.total);
    for (const HeadLoss& h : r.loss.heads)
      losses << "," << format_double(h.classification) << "," << format_double(h.regression);
    losses << "\r\n";
    losses.flush();
  };
  auto on_diverge = [&](const StepRecord& r, const SceneBatch& b) {
    nlohmann::json dump{{"manifest", kManifestFile},
                        {"step", r.step},
                        {"scene", r.scene},
                        {"sampling_seed", b.sampling_seed},
                        {"num_points", b.cloud.size()}};
    nlohmann::json xyz = nlohmann::json::array();
    for (const Vec3& p : b.cloud.xyz()) xyz.push_back(p);
    dump["xyz"] = std::move(xyz);
    dump["features"] = std::vector<double>(b.cloud.features().begin(), b.cloud.features().end());
    write_text(out_dir / "diverged_batch.json", dump.dump() + "\n");
    m.outputs["diverged_batch"] = "diverged_batch.json";
    m.outputs["losses"] = "losses.csv";
    finish_manifest(m, out_dir, {{"diverged", true}, {"step", r.step}, {"scene", r.scene}});
  };
  const TrainResult result = train_detector(det, scenes, cfg.train, on_step, on_diverge);
  losses.close();

  const EvalMetrics heldout = evaluate(
      det, make_scenes(cfg.scene, cfg.eval_scenes, derive_seed(cfg.seed(), "heldout"), threads),
      cfg.train.num_points, cfg.seed());
  const double reduction = 1.0 - result.final_dataset_loss / result.initial_dataset_loss;
  const nlohmann::json summary{
      {"steps", result.steps.size()},
      {"scenes", scenes.size()},
      {"learning_rate", cfg.train.learning_rate},
      {"initial_loss", result.initial_dataset_loss},
      {"final_loss", result.final_dataset_loss},
      {"loss_reduction", reduction},
      {"step0_loss", result.steps.front().loss.total},
      {"last_step_loss", result.steps.back().loss.total},
      {"heldout_fg_accuracy", heldout.foreground_accuracy},
      {"heldout_mean_reg_error", heldout.mean_regression_error}};
  save_checkpoint(det, out_dir / "ckpt.json", out_dir / "ckpt.bin",
                  {{"manifest", kManifestFile}, {"steps", result.steps.size()}});
  m.outputs["losses"] = "losses.csv";
  m.outputs["checkpoint"] = "ckpt.json";
  m.outputs["checkpoint_blob"] = "ckpt.bin";
  finish_manifest(m, out_dir, summary);
  return summary;
}

nlohmann::json run_bench_command(const RunConfig& cfg, const fs::path& out_dir) {
  cfg.validate();
  prepare_dir(out_dir);
  RunManifest m = start_manifest("bench", cfg);
  DpnConfig dpn_cfg = cfg.detector.backbone;
  dpn_cfg.num_seeds = cfg.bench.seeds;
  const SaConfig sa_cfg = SaConfig::scale_oriented(dpn_cfg);
  std::vector<PointCloud> workload;
  for (std::size_t i = 0; i < cfg.bench.clouds; ++i)
    workload.push_back(random_cloud(cfg.bench.points, derive_seed(derive_seed(cfg.seed(), "bench.cloud"), i)));
  BenchOptions opts;
  opts.reps = cfg.bench.reps;
  opts.warmup = cfg.bench.warmup;
  opts.include_compute = cfg.bench.include_compute;
  opts.seed = cfg.seed();
  const auto [dpn, sa] = run_bench(workload, dpn_cfg, sa_cfg, opts);

  const nlohmann::json comparison{
      {"sampling_median_ratio", dpn.sampling.median_us / sa.sampling.median_us},
      {"sampling_speedup", sa.sampling.median_us / dpn.sampling.median_us},
      {"dpn_faster_sampling", dpn.sampling.median_us < sa.sampling.median_us},
      {"dpn_calls", {dpn.counters.fps_calls, dpn.counters.ball_query_calls}},
      {"sa_calls", {sa.counters.fps_calls, sa.counters.ball_query_calls}},
      {"memory_ratio", static_cast<double>(dpn.memory_bytes) / static_cast<double>(sa.memory_bytes)}};
  const nlohmann::json out{{"schema_version", kBenchSchemaVersion},
                           {"manifest", kManifestFile},
                           {"points", cfg.bench.points},
                           {"clouds", cfg.bench.clouds},
                           {"dpointnet", dpn},
                           {"sa_baseline", sa},
                           {"comparison", comparison}};
  write_text(out_dir / "bench.json", out.dump(2) + "\n");
  m.outputs["bench"] = "bench.json";
  finish_manifest(m, out_dir, comparison);
  return out;
}

nlohmann::json run_sweep_command(const RunConfig& cfg, const std::string& axis_name,
                                 const fs::path& out_dir) {
  cfg.validate();
  const SweepAxis axis = parse_sweep_axis(axis_name);
  const std::vector<std::string> values = default_sweep_values(axis);
  for (const std::string& v : values) apply_sweep_value(cfg, axis, v);
  prepare_dir(out_dir);
  RunManifest m = start_manifest("sweep", cfg);
  const std::vector<SweepRow> rows = run_sweep(cfg, axis, values, env_thread_cap());
  std::ostringstream csv;
  write_sweep_csv(csv, rows);
  write_text(out_dir / "sweep.csv", csv.str());
  m.outputs["sweep"] = "sweep.csv";
  nlohmann::json summary{{"axis", axis_name}, {"rows", rows.size()}};
  nlohmann::json list = nlohmann::json::array();
  for (const SweepRow& r : rows) {
    list.push_back({{"value", r.value},
                    {"final_loss", std::isfinite(r.final_loss) ? nlohmann::json(r.final_loss)
                                                               : nlohmann::json(nullptr)},
                    {"converged", r.converged},
                    {"memory_bytes", r.memory_bytes}});
  }
  summary["values"] = std::move(list);
  finish_manifest(m, out_dir, summary);
  return summary;
}

nlohmann::json run_gen_command(const RunConfig& cfg, std::size_t num_scenes,
                               const fs::path& out_dir) {
  cfg.validate();
  require(num_scenes >= 1, ErrorCode::InvalidArgument, "gen: need at least one scene");
  prepare_dir(out_dir / "scenes");
  RunManifest m = start_manifest("gen", cfg);
  const auto scenes = make_scenes(cfg.scene, num_scenes, cfg.seed(), env_thread_cap());
  std::size_t points = 0;
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "scene_%04zu", i);
    write_text(out_dir / "scenes" / (std::string(name) + ".json"),
               scene_to_json(scenes[i]).dump() + "\n");
    write_kitti_bin(scenes[i].cloud, out_dir / "scenes" / (std::string(name) + ".bin"));
    points += scenes[i].cloud.size();
  }
  m.outputs["scenes"] = "scenes/";
  const nlohmann::json summary{{"scenes", scenes.size()}, {"points", points}};
  finish_manifest(m, out_dir, summary);
  return summary;
}

}  // namespace dpn
