#include "dpn/dpn.h"

#include <algorithm>
#include <cstdlib>
#include <cstring>
#include <exception>
#include <new>
#include <string>
#include <utility>

#include "dpn/config.hpp"
#include "dpn/error.hpp"
#include "dpn/dpointnet.hpp"
#include "dpn/model.hpp"
#include "dpn/pointcloud.hpp"
#include "dpn/runs.hpp"
#include "dpn/sampling.hpp"

struct dpn_config {
  dpn::RunConfig cfg;
};

struct dpn_cloud {
  dpn::PointCloud cloud;
};

struct dpn_model {
  dpn::Detector det;
};

namespace {

thread_local std::string last_error;

dpn_status to_status(dpn::ErrorCode code) {
  switch (code) {
    case dpn::ErrorCode::InvalidArgument: return DPN_ERR_INVALID_ARGUMENT;
    case dpn::ErrorCode::Dimension: return DPN_ERR_DIMENSION;
    case dpn::ErrorCode::EmptyGroup: return DPN_ERR_EMPTY_GROUP;
    case dpn::ErrorCode::Format: return DPN_ERR_FORMAT;
    case dpn::ErrorCode::Io: return DPN_ERR_IO;
    case dpn::ErrorCode::Validation: return DPN_ERR_VALIDATION;
    case dpn::ErrorCode::Numeric: return DPN_ERR_NUMERIC;
    case dpn::ErrorCode::CheckFailed: return DPN_ERR_CHECK_FAILED;
    case dpn::ErrorCode::Internal: return DPN_ERR_INTERNAL;
  }
  return DPN_ERR_INTERNAL;
}

template <typename Fn>
dpn_status guarded(Fn&& fn) {
  try {
    fn();
    return DPN_OK;
  } catch (const dpn::Error& e) {
    last_error = e.what();
    return to_status(e.code());
  } catch (const std::bad_alloc&) {
    last_error = "out of memory";
    return DPN_ERR_INTERNAL;
  } catch (const std::exception& e) {
    last_error = e.what();
    return DPN_ERR_INTERNAL;
  } catch (...) {
    last_error = "unknown error";
    return DPN_ERR_INTERNAL;
  }
}

void need(const void* p, const char* what) {
  dpn::require(p != nullptr, dpn::ErrorCode::InvalidArgument, std::string(what) + " is NULL");
}

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

void emit(char** out_json, const nlohmann::json& j) {
  if (out_json) *out_json = dup_string(j.dump(2));
}

std::filesystem::path dir_arg(const char* p) {
  need(p, "out_dir");
  return std::filesystem::path(p);
}

}  // namespace

extern "C" {

const char* dpn_version(void) {
  static const std::string v = "0.1.0+" + dpn::build_id();
  return v.c_str();
}

const char* dpn_last_error(void) { return last_error.c_str(); }

const char* dpn_status_string(dpn_status status) {
  switch (status) {
    case DPN_OK: return "ok";
    case DPN_ERR_INVALID_ARGUMENT: return "invalid argument";
    case DPN_ERR_DIMENSION: return "dimension mismatch";
    case DPN_ERR_EMPTY_GROUP: return "empty group";
    case DPN_ERR_FORMAT: return "format error";
    case DPN_ERR_IO: return "i/o error";
    case DPN_ERR_VALIDATION: return "validation error";
    case DPN_ERR_NUMERIC: return "numeric error";
    case DPN_ERR_CHECK_FAILED: return "check failed";
    case DPN_ERR_INTERNAL: return "internal error";
  }
  return "unknown status";
}

void dpn_string_free(char* s) { std::free(s); }

dpn_status dpn_config_create(const char* preset, dpn_config** out) {
  return guarded([&] {
    need(out, "out");
    *out = new dpn_config{dpn::preset(preset ? preset : "desk")};
  });
}

void dpn_config_free(dpn_config* cfg) { delete cfg; }

dpn_status dpn_config_load(dpn_config* cfg, const char* path) {
  return guarded([&] {
    need(cfg, "cfg");
    need(path, "path");
    cfg->cfg = dpn::load_run_config(path, cfg->cfg);
  });
}

dpn_status dpn_config_set(dpn_config* cfg, const char* key, const char* json_value) {
  return guarded([&] {
    need(cfg, "cfg");
    need(key, "key");
    need(json_value, "json_value");
    nlohmann::json value;
    try {
      value = nlohmann::json::parse(json_value);
    } catch (const nlohmann::json::exception& e) {
      dpn::fail(dpn::ErrorCode::Format, std::string("value for '") + key + "': " + e.what());
    }
    cfg->cfg = dpn::apply_json(cfg->cfg, nlohmann::json{{key, std::move(value)}});
  });
}

dpn_status dpn_config_validate(const dpn_config* cfg) {
  return guarded([&] {
    need(cfg, "cfg");
    cfg->cfg.validate();
  });
}

dpn_status dpn_config_to_json(const dpn_config* cfg, char** out_json) {
  return guarded([&] {
    need(cfg, "cfg");
    need(out_json, "out_json");
    emit(out_json, dpn::to_json(cfg->cfg));
  });
}

dpn_status dpn_cloud_read_kitti(const char* path, dpn_cloud** out) {
  return guarded([&] {
    need(path, "path");
    need(out, "out");
    *out = new dpn_cloud{dpn::read_kitti_bin(path)};
  });
}

dpn_status dpn_cloud_write_kitti(const dpn_cloud* cloud, const char* path) {
  return guarded([&] {
    need(cloud, "cloud");
    need(path, "path");
    dpn::write_kitti_bin(cloud->cloud, path);
  });
}

dpn_status dpn_cloud_from_arrays(const double* xyz, const double* intensity, size_t n,
                                 dpn_cloud** out) {
  return guarded([&] {
    need(out, "out");
    dpn::require(n == 0 || xyz != nullptr, dpn::ErrorCode::InvalidArgument, "xyz is NULL");
    std::vector<dpn::Vec3> pts(n);
    std::vector<double> feats(n, 0.0);
    for (size_t i = 0; i < n; ++i) {
      pts[i] = {xyz[3 * i], xyz[3 * i + 1], xyz[3 * i + 2]};
      if (intensity) feats[i] = intensity[i];
    }
    *out = new dpn_cloud{dpn::PointCloud(std::move(pts), std::move(feats), 1)};
  });
}

void dpn_cloud_free(dpn_cloud* cloud) { delete cloud; }

size_t dpn_cloud_size(const dpn_cloud* cloud) { return cloud ? cloud->cloud.size() : 0; }

dpn_status dpn_cloud_xyz(const dpn_cloud* cloud, double* xyz, size_t capacity) {
  return guarded([&] {
    need(cloud, "cloud");
    need(xyz, "xyz");
    const auto pts = cloud->cloud.xyz();
    dpn::require(capacity >= pts.size(), dpn::ErrorCode::InvalidArgument,
                 "xyz buffer holds " + std::to_string(capacity) + " points, need " +
                     std::to_string(pts.size()));
    for (size_t i = 0; i < pts.size(); ++i)
      for (int d = 0; d < 3; ++d) xyz[3 * i + d] = pts[i][d];
  });
}

namespace {
std::vector<dpn::Vec3> to_points(const double* xyz, size_t n) {
  dpn::require(n == 0 || xyz != nullptr, dpn::ErrorCode::InvalidArgument, "xyz is NULL");
  std::vector<dpn::Vec3> pts(n);
  for (size_t i = 0; i < n; ++i) pts[i] = {xyz[3 * i], xyz[3 * i + 1], xyz[3 * i + 2]};
  return pts;
}
}  // namespace

dpn_status dpn_fps(const double* xyz, size_t n, size_t m, size_t start_index,
                   uint32_t* out_indices) {
  return guarded([&] {
    need(out_indices, "out_indices");
    const auto pts = to_points(xyz, n);
    const dpn::SeedSet s = dpn::farthest_point_sampling(pts, m, start_index);
    std::copy(s.indices.begin(), s.indices.end(), out_indices);
  });
}

dpn_status dpn_ball_query(const double* xyz, size_t n, const uint32_t* seed_indices,
                          size_t num_seeds, double radius, size_t k, uint64_t rng_seed,
                          uint32_t* out_indices, uint32_t* out_found) {
  return guarded([&] {
    need(out_indices, "out_indices");
    dpn::require(num_seeds == 0 || seed_indices != nullptr, dpn::ErrorCode::InvalidArgument,
                 "seed_indices is NULL");
    const auto pts = to_points(xyz, n);
    dpn::SeedSet seeds;
    for (size_t j = 0; j < num_seeds; ++j) {
      dpn::require(seed_indices[j] < n, dpn::ErrorCode::InvalidArgument,
                   "seed index " + std::to_string(seed_indices[j]) + " out of range");
      seeds.indices.push_back(seed_indices[j]);
      seeds.xyz.push_back(pts[seed_indices[j]]);
    }
    const dpn::NeighborList nl = dpn::ball_query(pts, seeds, radius, k, rng_seed);
    std::copy(nl.indices.begin(), nl.indices.end(), out_indices);
    if (out_found) std::copy(nl.found.begin(), nl.found.end(), out_found);
  });
}

dpn_status dpn_model_create(const dpn_config* cfg, dpn_model** out) {
  return guarded([&] {
    need(cfg, "cfg");
    need(out, "out");
    cfg->cfg.validate();
    *out = new dpn_model{dpn::Detector::init(cfg->cfg.resolved_detector(), 4, cfg->cfg.seed())};
  });
}

dpn_status dpn_model_load(const char* ckpt_json_path, dpn_model** out) {
  return guarded([&] {
    need(ckpt_json_path, "ckpt_json_path");
    need(out, "out");
    *out = new dpn_model{dpn::load_checkpoint(ckpt_json_path)};
  });
}

dpn_status dpn_model_save(const dpn_model* model, const char* ckpt_json_path,
                          const char* ckpt_blob_path) {
  return guarded([&] {
    need(model, "model");
    need(ckpt_json_path, "ckpt_json_path");
    need(ckpt_blob_path, "ckpt_blob_path");
    dpn::save_checkpoint(model->det, ckpt_json_path, ckpt_blob_path);
  });
}

void dpn_model_free(dpn_model* model) { delete model; }

size_t dpn_model_num_seeds(const dpn_model* model) {
  return model ? model->det.cfg.backbone.num_seeds : 0;
}

dpn_status dpn_model_infer(const dpn_model* model, const dpn_cloud* cloud, uint64_t seed,
                           double* logits, double* residuals, double* seed_xyz) {
  return guarded([&] {
    need(model, "model");
    need(cloud, "cloud");
    need(logits, "logits");
    const dpn::Detector& det = model->det;
    dpn::require(3 + cloud->cloud.feature_dim() == det.input_dim, dpn::ErrorCode::Dimension,
                 "cloud has " + std::to_string(cloud->cloud.feature_dim()) +
                     " feature channels, model expects " + std::to_string(det.input_dim - 3));
    dpn::Tape tape(false);
    const dpn::DpnOutput bb = dpn::forward(tape, cloud->cloud, det.cfg.backbone, det.backbone, seed);
    const dpn::HeadOutput out = det.rpn_top.forward(tape, bb.taps[det.cfg.top_tap()]);
    const auto lv = out.logits.values();
    std::copy(lv.begin(), lv.end(), logits);
    if (residuals) {
      const auto rv = out.residuals.values();
      std::copy(rv.begin(), rv.end(), residuals);
    }
    if (seed_xyz) {
      const auto& sx = bb.sg.seeds.xyz;
      for (size_t i = 0; i < sx.size(); ++i)
        for (int d = 0; d < 3; ++d) seed_xyz[3 * i + d] = sx[i][d];
    }
  });
}

dpn_status dpn_run_check(const dpn_config* cfg, const char* out_dir, char** out_json) {
  return guarded([&] {
    need(cfg, "cfg");
    const nlohmann::json summary = dpn::run_check_command(cfg->cfg, dir_arg(out_dir));
    emit(out_json, summary);
    if (!summary.at("passed").get<bool>())
      dpn::fail(dpn::ErrorCode::CheckFailed,
                std::to_string(summary.at("failures").get<std::size_t>()) + " check(s) failed");
  });
}

dpn_status dpn_run_train(const dpn_config* cfg, const char* scenes_dir, const char* out_dir,
                         char** out_json) {
  return guarded([&] {
    need(cfg, "cfg");
    const std::filesystem::path scenes = scenes_dir ? scenes_dir : "";
    emit(out_json, dpn::run_train_command(cfg->cfg, scenes, dir_arg(out_dir)));
  });
}

dpn_status dpn_run_bench(const dpn_config* cfg, const char* out_dir, char** out_json) {
  return guarded([&] {
    need(cfg, "cfg");
    emit(out_json, dpn::run_bench_command(cfg->cfg, dir_arg(out_dir)));
  });
}

dpn_status dpn_run_sweep(const dpn_config* cfg, const char* axis, const char* out_dir,
                         char** out_json) {
  return guarded([&] {
    need(cfg, "cfg");
    need(axis, "axis");
    emit(out_json, dpn::run_sweep_command(cfg->cfg, axis, dir_arg(out_dir)));
  });
}

dpn_status dpn_run_gen(const dpn_config* cfg, size_t num_scenes, const char* out_dir,
                       char** out_json) {
  return guarded([&] {
    need(cfg, "cfg");
    emit(out_json, dpn::run_gen_command(cfg->cfg, num_scenes, dir_arg(out_dir)));
  });
}

void dpn_set_fault_injection(int drop_fusion) {
  dpn::testing::set_mutation(drop_fusion ? dpn::testing::Mutation::DropFusion
                                         : dpn::testing::Mutation::None);
}

}  // extern "C"
