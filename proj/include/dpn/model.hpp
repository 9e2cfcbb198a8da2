#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "dpn/dpointnet.hpp"
#include "dpn/heads.hpp"

namespace dpn {

struct DetectorConfig {
  DpnConfig backbone;
  std::size_t head_hidden = 32;
  /// Tap read by the inference head; negative counts from the last FA layer.
  int head_tap = -1;
  /// Auxiliary heads sit on the taps directly below head_tap, at most one per
  /// lower tap.
  std::size_t num_aux_heads = 2;
  /// Also attach BCE-classified heads, the second loss pair of the total.
  bool rcnn_heads = true;
  AnchorSize anchor;
  LossOptions loss;

  void validate() const;
  std::size_t top_tap() const;
  std::vector<std::size_t> aux_taps() const;
};

void to_json(nlohmann::json& j, const DetectorConfig& c);
void from_json(const nlohmann::json& j, DetectorConfig& c);

/// Backbone plus detection heads. Each component is initialised from its own
/// named stream of the seed, so adding or removing auxiliary heads never
/// changes the backbone or the top heads.
struct Detector {
  DetectorConfig cfg;
  std::size_t input_dim = 0;
  DpnParams backbone;
  DetectionHead rpn_top;
  std::vector<DetectionHead> rpn_aux;
  DetectionHead rcnn_top;
  std::vector<DetectionHead> rcnn_aux;

  static Detector init(const DetectorConfig& cfg, std::size_t input_dim, std::uint64_t seed);

  std::vector<std::pair<std::string, Tensor>> named_parameters() const;
  std::vector<Tensor> parameters() const;
  /// Copy without auxiliary heads (the inference configuration).
  Detector without_aux() const;
};

struct DetectorOutput {
  DpnOutput backbone;
  HeadOutput rpn_top;
  std::vector<HeadOutput> rpn_aux;
  HeadOutput rcnn_top;  // undefined tensors when rcnn_heads is off
  std::vector<HeadOutput> rcnn_aux;
};

DetectorOutput run_detector(Tape& tape, const Detector& det, const PointCloud& cloud,
                            std::uint64_t rng_seed);

/// Top RPN head only; auxiliary heads are never evaluated.
HeadOutput infer(const Detector& det, const PointCloud& cloud, std::uint64_t rng_seed);

struct DetectorLoss {
  LossReport report;
  Tensor total;
};

/// Sum of rpn (focal + smooth-L1) and rcnn (BCE + smooth-L1) losses of the
/// top and auxiliary heads, unweighted.
DetectorLoss detector_loss(Tape& tape, const Detector& det, const DetectorOutput& out,
                           const Targets& targets);

/// JSON manifest + little-endian float32 blob, tensors in named_parameters order.
void save_checkpoint(const Detector& det, const std::filesystem::path& json_path,
                     const std::filesystem::path& blob_path,
                     const nlohmann::json& extra = nlohmann::json::object());
Detector load_checkpoint(const std::filesystem::path& json_path);

}  // namespace dpn
