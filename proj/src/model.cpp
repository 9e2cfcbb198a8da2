#include "dpn/model.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "dpn/error.hpp"
#include "dpn/rng.hpp"

namespace dpn {
namespace {

std::string tap_name(std::size_t tap) { return "tap" + std::to_string(tap); }

void add_params(std::vector<std::pair<std::string, Tensor>>& out, const std::string& prefix,
                const Mlp& mlp) {
  for (std::size_t i = 0; i < mlp.layers().size(); ++i) {
    out.emplace_back(prefix + "." + std::to_string(i) + ".weight", mlp.layers()[i].weight);
    out.emplace_back(prefix + "." + std::to_string(i) + ".bias", mlp.layers()[i].bias);
  }
}

void add_head(std::vector<std::pair<std::string, Tensor>>& out, const std::string& prefix,
              const DetectionHead& h) {
  add_params(out, prefix + ".trunk", h.trunk);
  add_params(out, prefix + ".cls", h.cls);
  add_params(out, prefix + ".reg", h.reg);
}

DetectionHead make_head(const DetectorConfig& cfg, std::size_t tap, std::uint64_t seed,
                        const std::string& role) {
  Rng rng = Rng(seed).stream("head." + role + "." + tap_name(tap));
  return DetectionHead::init(cfg.backbone.tap_width(tap), cfg.head_hidden, rng);
}

}  // namespace

void DetectorConfig::validate() const {
  backbone.validate();
  const long layers = static_cast<long>(backbone.num_fa_layers);
  require(head_tap < layers && head_tap >= -layers, ErrorCode::Validation,
          "config: head_tap out of range for " + std::to_string(layers) + " FA layers");
  require(head_hidden > 0, ErrorCode::Validation, "config: head_hidden must be positive");
  require(anchor.length > 0 && anchor.height > 0 && anchor.width > 0, ErrorCode::Validation,
          "config: anchor sizes must be positive");
}

std::size_t DetectorConfig::top_tap() const {
  const long layers = static_cast<long>(backbone.num_fa_layers);
  return static_cast<std::size_t>(head_tap < 0 ? layers + head_tap : head_tap);
}

std::vector<std::size_t> DetectorConfig::aux_taps() const {
  std::vector<std::size_t> taps;
  const std::size_t top = top_tap();
  for (std::size_t i = 1; i <= num_aux_heads && i <= top; ++i) taps.push_back(top - i);
  return taps;
}

void to_json(nlohmann::json& j, const DetectorConfig& c) {
  j = nlohmann::json{{"backbone", c.backbone},
                     {"head_hidden", c.head_hidden},
                     {"head_tap", c.head_tap},
                     {"num_aux_heads", c.num_aux_heads},
                     {"rcnn_heads", c.rcnn_heads},
                     {"anchor", {c.anchor.length, c.anchor.height, c.anchor.width}},
                     {"focal_alpha", c.loss.focal_alpha},
                     {"focal_gamma", c.loss.focal_gamma},
                     {"smooth_l1_beta", c.loss.smooth_l1_beta}};
}

void from_json(const nlohmann::json& j, DetectorConfig& c) {
  try {
    if (j.contains("backbone")) c.backbone = j.at("backbone").get<DpnConfig>();
    c.head_hidden = j.value("head_hidden", c.head_hidden);
    c.head_tap = j.value("head_tap", c.head_tap);
    c.num_aux_heads = j.value("num_aux_heads", c.num_aux_heads);
    c.rcnn_heads = j.value("rcnn_heads", c.rcnn_heads);
    if (j.contains("anchor")) {
      const auto a = j.at("anchor").get<std::vector<double>>();
      require(a.size() == 3, ErrorCode::Validation, "config: anchor needs l, h, w");
      c.anchor = {a[0], a[1], a[2]};
    }
    c.loss.focal_alpha = j.value("focal_alpha", c.loss.focal_alpha);
    c.loss.focal_gamma = j.value("focal_gamma", c.loss.focal_gamma);
    c.loss.smooth_l1_beta = j.value("smooth_l1_beta", c.loss.smooth_l1_beta);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::Validation, std::string("config: ") + e.what());
  }
}

Detector Detector::init(const DetectorConfig& cfg, std::size_t input_dim, std::uint64_t seed) {
  cfg.validate();
  Detector d;
  d.cfg = cfg;
  d.input_dim = input_dim;
  Rng backbone_rng = Rng(seed).stream("backbone");
  d.backbone = DpnParams::init(cfg.backbone, input_dim, backbone_rng);
  const std::size_t top = cfg.top_tap();
  d.rpn_top = make_head(cfg, top, seed, "rpn");
  if (cfg.rcnn_heads) d.rcnn_top = make_head(cfg, top, seed, "rcnn");
  for (std::size_t tap : cfg.aux_taps()) {
    d.rpn_aux.push_back(make_head(cfg, tap, seed, "rpn"));
    if (cfg.rcnn_heads) d.rcnn_aux.push_back(make_head(cfg, tap, seed, "rcnn"));
  }
  return d;
}

std::vector<std::pair<std::string, Tensor>> Detector::named_parameters() const {
  std::vector<std::pair<std::string, Tensor>> out;
  for (std::size_t l = 0; l < backbone.layers.size(); ++l) {
    add_params(out, "backbone.fa" + std::to_string(l), backbone.layers[l]);
  }
  const std::size_t top = cfg.top_tap();
  const auto aux = cfg.aux_taps();
  add_head(out, "rpn." + tap_name(top), rpn_top);
  for (std::size_t i = 0; i < rpn_aux.size(); ++i) add_head(out, "rpn." + tap_name(aux[i]), rpn_aux[i]);
  if (cfg.rcnn_heads) {
    add_head(out, "rcnn." + tap_name(top), rcnn_top);
    for (std::size_t i = 0; i < rcnn_aux.size(); ++i)
      add_head(out, "rcnn." + tap_name(aux[i]), rcnn_aux[i]);
  }
  return out;
}

std::vector<Tensor> Detector::parameters() const {
  std::vector<Tensor> out;
  for (auto& [name, t] : named_parameters()) out.push_back(t);
  return out;
}

Detector Detector::without_aux() const {
  Detector d = *this;
  d.cfg.num_aux_heads = 0;
  d.rpn_aux.clear();
  d.rcnn_aux.clear();
  return d;
}

DetectorOutput run_detector(Tape& tape, const Detector& det, const PointCloud& cloud,
                            std::uint64_t rng_seed) {
  DetectorOutput out;
  out.backbone = forward(tape, cloud, det.cfg.backbone, det.backbone, rng_seed);
  const auto& taps = out.backbone.taps;
  const auto aux = det.cfg.aux_taps();
  out.rpn_top = det.rpn_top.forward(tape, taps[det.cfg.top_tap()]);
  for (std::size_t i = 0; i < det.rpn_aux.size(); ++i)
    out.rpn_aux.push_back(det.rpn_aux[i].forward(tape, taps[aux[i]]));
  if (det.cfg.rcnn_heads) {
    out.rcnn_top = det.rcnn_top.forward(tape, taps[det.cfg.top_tap()]);
    for (std::size_t i = 0; i < det.rcnn_aux.size(); ++i)
      out.rcnn_aux.push_back(det.rcnn_aux[i].forward(tape, taps[aux[i]]));
  }
  return out;
}

HeadOutput infer(const Detector& det, const PointCloud& cloud, std::uint64_t rng_seed) {
  Tape tape(false);
  const DpnOutput bb = forward(tape, cloud, det.cfg.backbone, det.backbone, rng_seed);
  return det.rpn_top.forward(tape, bb.taps[det.cfg.top_tap()]);
}

DetectorLoss detector_loss(Tape& tape, const Detector& det, const DetectorOutput& out,
                           const Targets& targets) {
  const auto aux = det.cfg.aux_taps();
  const LossOptions& opts = det.cfg.loss;
  std::vector<HeadLossTensors> parts;
  std::vector<std::string> names;
  const std::string top = tap_name(det.cfg.top_tap());

  parts.push_back(head_loss(tape, out.rpn_top, targets, ClassificationLoss::Focal, opts));
  names.push_back("rpn." + top);
  for (std::size_t i = 0; i < out.rpn_aux.size(); ++i) {
    parts.push_back(head_loss(tape, out.rpn_aux[i], targets, ClassificationLoss::Focal, opts));
    names.push_back("rpn_aux." + tap_name(aux[i]));
  }
  if (det.cfg.rcnn_heads) {
    parts.push_back(head_loss(tape, out.rcnn_top, targets, ClassificationLoss::Bce, opts));
    names.push_back("rcnn." + top);
    for (std::size_t i = 0; i < out.rcnn_aux.size(); ++i) {
      parts.push_back(head_loss(tape, out.rcnn_aux[i], targets, ClassificationLoss::Bce, opts));
      names.push_back("rcnn_aux." + tap_name(aux[i]));
    }
  }
  DetectorLoss result;
  result.total = parts.front().total;
  for (std::size_t i = 1; i < parts.size(); ++i) result.total = add(tape, result.total, parts[i].total);
  for (std::size_t i = 0; i < parts.size(); ++i) result.report.heads.push_back(parts[i].values(names[i]));
  result.report.total = result.total.item();
  return result;
}

void save_checkpoint(const Detector& det, const std::filesystem::path& json_path,
                     const std::filesystem::path& blob_path, const nlohmann::json& extra) {
  static_assert(std::endian::native == std::endian::little,
                "checkpoint blobs are little-endian float32");
  nlohmann::json tensors = nlohmann::json::array();
  std::vector<float> blob;
  for (const auto& [name, t] : det.named_parameters()) {
    tensors.push_back({{"name", name},
                       {"shape", {t.rows(), t.cols()}},
                       {"offset", blob.size()},
                       {"count", t.size()}});
    for (double v : t.values()) blob.push_back(static_cast<float>(v));
  }
  nlohmann::json manifest{{"format", "dpn-checkpoint"},
                          {"version", 1},
                          {"dtype", "float32-le"},
                          {"blob", blob_path.filename().string()},
                          {"input_dim", det.input_dim},
                          {"detector", det.cfg},
                          {"tensors", std::move(tensors)},
                          {"run", extra}};
  {
    std::ofstream out(blob_path, std::ios::binary | std::ios::trunc);
    require(out.good(), ErrorCode::Io, "cannot write " + blob_path.string());
    out.write(reinterpret_cast<const char*>(blob.data()),
              static_cast<std::streamsize>(blob.size() * sizeof(float)));
    require(out.good(), ErrorCode::Io, "short write to " + blob_path.string());
  }
  std::ofstream out(json_path, std::ios::trunc);
  require(out.good(), ErrorCode::Io, "cannot write " + json_path.string());
  out << manifest.dump(2) << '\n';
}

Detector load_checkpoint(const std::filesystem::path& json_path) {
  std::ifstream in(json_path);
  require(in.good(), ErrorCode::Io, "cannot open " + json_path.string());
  nlohmann::json manifest;
  try {
    in >> manifest;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::Format, "checkpoint manifest: " + std::string(e.what()));
  }
  require(manifest.value("format", std::string{}) == "dpn-checkpoint", ErrorCode::Format,
          "checkpoint manifest: missing format tag");
  const auto blob_path = json_path.parent_path() / manifest.at("blob").get<std::string>();
  std::ifstream bin(blob_path, std::ios::binary);
  require(bin.good(), ErrorCode::Io, "cannot open " + blob_path.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(bin)), std::istreambuf_iterator<char>());
  require(bytes.size() % sizeof(float) == 0, ErrorCode::Format, "checkpoint blob: truncated");
  std::vector<float> blob(bytes.size() / sizeof(float));
  std::memcpy(blob.data(), bytes.data(), bytes.size());

  const DetectorConfig cfg = manifest.at("detector").get<DetectorConfig>();
  Detector det = Detector::init(cfg, manifest.at("input_dim").get<std::size_t>(), 0);
  auto params = det.named_parameters();
  const auto& tensors = manifest.at("tensors");
  require(tensors.size() == params.size(), ErrorCode::Format,
          "checkpoint: tensor count does not match the configured detector");
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& [name, t] = params[i];
    const auto& entry = tensors[i];
    require(entry.at("name").get<std::string>() == name, ErrorCode::Format,
            "checkpoint: expected tensor " + name);
    const auto shape = entry.at("shape").get<std::vector<std::size_t>>();
    require(shape.size() == 2 && shape[0] == t.rows() && shape[1] == t.cols(), ErrorCode::Format,
            "checkpoint: shape mismatch for " + name);
    const std::size_t offset = entry.at("offset").get<std::size_t>();
    require(offset + t.size() <= blob.size(), ErrorCode::Format,
            "checkpoint blob: too short for " + name);
    auto dst = t.mutable_values();
    for (std::size_t k = 0; k < dst.size(); ++k) dst[k] = blob[offset + k];
  }
  return det;
}

}  // namespace dpn
