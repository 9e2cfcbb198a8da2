#include "dpn/config.hpp"

#include <fstream>
#include <set>

#include "dpn/error.hpp"

namespace dpn {

DetectorConfig RunConfig::resolved_detector() const {
  DetectorConfig d = detector;
  if (!aux_heads) d.num_aux_heads = 0;
  return d;
}

void RunConfig::validate() const {
  resolved_detector().validate();
  scene.validate();
  require(train.epochs >= 1, ErrorCode::Validation, "config: epochs must be >= 1");
  require(train.learning_rate > 0, ErrorCode::Validation, "config: learning_rate must be positive");
  require(train.num_points >= detector.backbone.num_seeds, ErrorCode::Validation,
          "config: num_points must be >= num_seeds");
  require(num_scenes >= 1 && eval_scenes >= 1, ErrorCode::Validation,
          "config: scene counts must be >= 1");
  require(bench.reps >= 5, ErrorCode::Validation, "config: bench_reps must be >= 5");
  require(bench.points >= bench.seeds && bench.seeds >= 1 && bench.clouds >= 1,
          ErrorCode::Validation, "config: need bench_points >= bench_seeds >= 1");
  require(sweep.bench_reps >= 5, ErrorCode::Validation, "config: sweep_bench_reps must be >= 5");
  require(sweep.epochs >= 1 && sweep.scenes >= 1 && sweep.eval_scenes >= 1,
          ErrorCode::Validation, "config: sweep sizes must be >= 1");
}

RunConfig desk_preset() {
  RunConfig c;
  c.preset = "desk";
  DpnConfig& b = c.detector.backbone;
  b.num_seeds = 256;
  b.mlp_widths = {{16}, {32}, {48}, {64}};
  b.rng_seed = 7;
  c.train.seed = b.rng_seed;
  c.scene.min_range_m = 5.0;
  c.scene.max_range_m = 40.0;
  c.scene.ground_extent_m = 40.0;
  c.scene.num_objects = 8;
  c.scene.noise_points = 1500;
  return c;
}

RunConfig paper_preset() {
  RunConfig c = desk_preset();
  c.preset = "paper";
  c.detector.backbone.num_seeds = 4096;
  c.detector.backbone.mlp_widths = DpnConfig::paper_preset().mlp_widths;
  c.train.num_points = 16384;
  c.train.learning_rate = 0.01;
  c.detector.head_hidden = 128;
  return c;
}

RunConfig preset(std::string_view name) {
  if (name == "desk") return desk_preset();
  if (name == "paper") return paper_preset();
  fail(ErrorCode::Validation, "unknown preset '" + std::string(name) + "' (expected desk|paper)");
}

nlohmann::json to_json(const RunConfig& c) {
  const DpnConfig& b = c.detector.backbone;
  nlohmann::json j = b;  // num_seeds, radius_m, k_neighbors, ...
  j["preset"] = c.preset;
  j["head_hidden"] = c.detector.head_hidden;
  j["head_tap"] = c.detector.head_tap;
  j["num_aux_heads"] = c.detector.num_aux_heads;
  j["aux_heads"] = c.aux_heads;
  j["rcnn_heads"] = c.detector.rcnn_heads;
  j["anchor"] = {c.detector.anchor.length, c.detector.anchor.height, c.detector.anchor.width};
  j["focal_alpha"] = c.detector.loss.focal_alpha;
  j["focal_gamma"] = c.detector.loss.focal_gamma;
  j["smooth_l1_beta"] = c.detector.loss.smooth_l1_beta;
  j["epochs"] = c.train.epochs;
  j["learning_rate"] = c.train.learning_rate;
  j["num_points"] = c.train.num_points;
  j["num_scenes"] = c.num_scenes;
  j["eval_scenes"] = c.eval_scenes;
  j["scene"] = c.scene;
  j["bench_points"] = c.bench.points;
  j["bench_seeds"] = c.bench.seeds;
  j["bench_reps"] = c.bench.reps;
  j["bench_warmup"] = c.bench.warmup;
  j["bench_clouds"] = c.bench.clouds;
  j["bench_compute"] = c.bench.include_compute;
  j["sweep_epochs"] = c.sweep.epochs;
  j["sweep_scenes"] = c.sweep.scenes;
  j["sweep_eval_scenes"] = c.sweep.eval_scenes;
  j["sweep_bench_reps"] = c.sweep.bench_reps;
  return j;
}

RunConfig apply_json(const RunConfig& base, const nlohmann::json& j) {
  require(j.is_object(), ErrorCode::Validation, "config: expected a JSON object");
  static const std::set<std::string> backbone_keys{
      "num_seeds", "radius_m", "k_neighbors", "num_fa_layers", "scheme",
      "group_sizes", "mlp_widths", "rng_seed", "fps_start"};
  static const std::set<std::string> detector_keys{
      "head_hidden", "head_tap", "num_aux_heads", "rcnn_heads", "anchor",
      "focal_alpha", "focal_gamma", "smooth_l1_beta"};
  static const std::set<std::string> run_keys{
      "preset", "aux_heads", "epochs", "learning_rate", "num_points", "num_scenes",
      "eval_scenes", "scene", "bench_points", "bench_seeds", "bench_reps", "bench_warmup",
      "bench_clouds", "bench_compute", "sweep_epochs", "sweep_scenes", "sweep_eval_scenes",
      "sweep_bench_reps"};
  for (const auto& [key, value] : j.items()) {
    require(backbone_keys.count(key) || detector_keys.count(key) || run_keys.count(key),
            ErrorCode::Validation, "config: unknown key '" + key + "'");
  }
  try {
    RunConfig c = j.contains("preset") ? preset(j.at("preset").get<std::string>()) : base;
    nlohmann::json bb, det;
    for (const auto& [key, value] : j.items()) {
      if (backbone_keys.count(key)) bb[key] = value;
      if (detector_keys.count(key)) det[key] = value;
    }
    if (!bb.empty()) from_json(bb, c.detector.backbone);
    if (!det.empty()) from_json(det, c.detector);
    c.train.seed = c.detector.backbone.rng_seed;
    c.aux_heads = j.value("aux_heads", c.aux_heads);
    c.train.epochs = j.value("epochs", c.train.epochs);
    c.train.learning_rate = j.value("learning_rate", c.train.learning_rate);
    c.train.num_points = j.value("num_points", c.train.num_points);
    c.num_scenes = j.value("num_scenes", c.num_scenes);
    c.eval_scenes = j.value("eval_scenes", c.eval_scenes);
    if (j.contains("scene")) c.scene = j.at("scene").get<SceneSpec>();
    c.bench.points = j.value("bench_points", c.bench.points);
    c.bench.seeds = j.value("bench_seeds", c.bench.seeds);
    c.bench.reps = j.value("bench_reps", c.bench.reps);
    c.bench.warmup = j.value("bench_warmup", c.bench.warmup);
    c.bench.clouds = j.value("bench_clouds", c.bench.clouds);
    c.bench.include_compute = j.value("bench_compute", c.bench.include_compute);
    c.sweep.epochs = j.value("sweep_epochs", c.sweep.epochs);
    c.sweep.scenes = j.value("sweep_scenes", c.sweep.scenes);
    c.sweep.eval_scenes = j.value("sweep_eval_scenes", c.sweep.eval_scenes);
    c.sweep.bench_reps = j.value("sweep_bench_reps", c.sweep.bench_reps);
    return c;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::Validation, std::string("config: ") + e.what());
  }
}

RunConfig load_run_config(const std::filesystem::path& path, const RunConfig& base) {
  std::ifstream in(path);
  require(in.good(), ErrorCode::Io, "cannot open config " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::Format, "config " + path.string() + ": " + e.what());
  }
  return apply_json(base, j);
}

}  // namespace dpn
