#include "dpn/pointcloud.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numbers>

#include "dpn/error.hpp"
#include "dpn/rng.hpp"

namespace dpn {
namespace {

constexpr std::size_t kKittiRecordBytes = 4 * sizeof(float);

static_assert(std::endian::native == std::endian::little,
              "KITTI .bin I/O assumes a little-endian host");

float read_f32(const std::uint8_t* p) {
  float v;
  std::memcpy(&v, p, sizeof v);
  return v;
}

void append_f32(std::vector<std::uint8_t>& out, float v) {
  std::uint8_t b[sizeof v];
  std::memcpy(b, &v, sizeof v);
  out.insert(out.end(), b, b + sizeof v);
}

Vec3 rotate_z(const Vec3& p, double yaw) {
  const double c = std::cos(yaw), s = std::sin(yaw);
  return {c * p[0] - s * p[1], s * p[0] + c * p[1], p[2]};
}

}  // namespace

PointCloud::PointCloud(std::vector<Vec3> xyz, std::vector<double> features,
                       std::size_t feature_dim)
    : xyz_(std::move(xyz)), features_(std::move(features)), feature_dim_(feature_dim) {
  require(features_.size() == xyz_.size() * feature_dim_, ErrorCode::Dimension,
          "PointCloud: features not row-aligned with xyz");
  for (const Vec3& p : xyz_) {
    require(std::isfinite(p[0]) && std::isfinite(p[1]) && std::isfinite(p[2]),
            ErrorCode::Numeric, "PointCloud: non-finite coordinate");
  }
}

PointCloud PointCloud::select(std::span<const std::size_t> index) const {
  std::vector<Vec3> xyz;
  std::vector<double> feats;
  xyz.reserve(index.size());
  feats.reserve(index.size() * feature_dim_);
  for (std::size_t i : index) {
    require(i < size(), ErrorCode::InvalidArgument, "PointCloud::select: index out of range");
    xyz.push_back(xyz_[i]);
    const auto f = features_of(i);
    feats.insert(feats.end(), f.begin(), f.end());
  }
  return PointCloud(std::move(xyz), std::move(feats), feature_dim_);
}

PointCloud PointCloud::translated(const Vec3& offset) const {
  std::vector<Vec3> xyz = xyz_;
  for (Vec3& p : xyz) {
    for (int a = 0; a < 3; ++a) p[a] += offset[a];
  }
  return PointCloud(std::move(xyz), features_, feature_dim_);
}

PointCloud parse_kitti_bin(std::span<const std::uint8_t> bytes) {
  require(bytes.size() % kKittiRecordBytes == 0, ErrorCode::Format,
          "kitti bin: length " + std::to_string(bytes.size()) +
              " is not a multiple of 16 bytes (4 x float32 per point)");
  const std::size_t n = bytes.size() / kKittiRecordBytes;
  std::vector<Vec3> xyz(n);
  std::vector<double> intensity(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint8_t* rec = bytes.data() + i * kKittiRecordBytes;
    for (int a = 0; a < 3; ++a) xyz[i][a] = read_f32(rec + a * sizeof(float));
    intensity[i] = read_f32(rec + 3 * sizeof(float));
    require(std::isfinite(xyz[i][0]) && std::isfinite(xyz[i][1]) && std::isfinite(xyz[i][2]) &&
                std::isfinite(intensity[i]),
            ErrorCode::Format, "kitti bin: non-finite value in record " + std::to_string(i));
  }
  return PointCloud(std::move(xyz), std::move(intensity), 1);
}

PointCloud read_kitti_bin(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), ErrorCode::Io, "cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return parse_kitti_bin(bytes);
}

std::vector<std::uint8_t> encode_kitti_bin(const PointCloud& cloud) {
  std::vector<std::uint8_t> out;
  out.reserve(cloud.size() * kKittiRecordBytes);
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const Vec3& p = cloud.xyz()[i];
    for (int a = 0; a < 3; ++a) append_f32(out, static_cast<float>(p[a]));
    const double intensity = cloud.feature_dim() > 0 ? cloud.features_of(i)[0] : 0.0;
    append_f32(out, static_cast<float>(intensity));
  }
  return out;
}

void write_kitti_bin(const PointCloud& cloud, const std::filesystem::path& path) {
  const auto bytes = encode_kitti_bin(cloud);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(out.good(), ErrorCode::Io, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  require(out.good(), ErrorCode::Io, "short write to " + path.string());
}

PointCloud sample_n_points(const PointCloud& cloud, std::size_t n, Rng& rng) {
  require(n >= 1, ErrorCode::InvalidArgument, "sample_n_points: n must be >= 1");
  require(!cloud.empty(), ErrorCode::InvalidArgument, "sample_n_points: empty cloud");
  const std::size_t total = cloud.size();
  std::vector<std::size_t> index(total);
  for (std::size_t i = 0; i < total; ++i) index[i] = i;
  // Fisher-Yates; the first n entries are a uniform subset.
  for (std::size_t i = total; i > 1; --i) {
    std::swap(index[i - 1], index[rng.below(i)]);
  }
  if (total >= n) {
    index.resize(n);
  } else {
    while (index.size() < n) index.push_back(rng.below(total));
  }
  return cloud.select(index);
}

bool Box3::contains(const Vec3& p, double eps) const noexcept {
  const Vec3 d{p[0] - center[0], p[1] - center[1], p[2] - center[2]};
  const Vec3 local = rotate_z(d, -yaw);
  return std::abs(local[0]) <= 0.5 * length + eps && std::abs(local[1]) <= 0.5 * width + eps &&
         std::abs(local[2]) <= 0.5 * height + eps;
}

void SceneSpec::validate() const {
  require(object_size[0] > 0 && object_size[1] > 0 && object_size[2] > 0, ErrorCode::Validation,
          "scene spec: object sizes must be positive");
  require(min_range_m > 0 && max_range_m >= min_range_m, ErrorCode::Validation,
          "scene spec: need 0 < min_range_m <= max_range_m");
  require(reference_range_m > 0 && points_at_reference >= 0, ErrorCode::Validation,
          "scene spec: bad density law");
  require(ground_extent_m > 0, ErrorCode::Validation, "scene spec: ground extent must be positive");
  for (double r : fixed_ranges) {
    require(r > 0 && std::isfinite(r), ErrorCode::Validation, "scene spec: fixed range must be positive");
  }
}

std::size_t SyntheticScene::points_in_box(std::size_t box) const {
  std::size_t n = 0;
  for (int l : labels) n += (l == static_cast<int>(box)) ? 1 : 0;
  return n;
}

SyntheticScene generate_scene(const SceneSpec& spec, std::uint64_t seed) {
  spec.validate();
  Rng root(seed);
  Rng place = root.stream("placement");
  Rng surf = root.stream("surface");
  Rng clutter = root.stream("clutter");

  SyntheticScene scene;
  scene.spec = spec;
  scene.seed = seed;

  const double l = spec.object_size[0], h = spec.object_size[1], w = spec.object_size[2];
  const double footprint = std::hypot(l, w);
  std::vector<double> ranges = spec.fixed_ranges;
  if (ranges.empty()) {
    for (std::size_t i = 0; i < spec.num_objects; ++i) {
      ranges.push_back(place.uniform(spec.min_range_m, spec.max_range_m));
    }
  }
  for (double r : ranges) {
    Box3 box;
    box.length = l;
    box.height = h;
    box.width = w;
    box.class_id = 1;
    // Non-overlapping footprints; give up on a random azimuth after a few tries
    // and spread along the ring deterministically instead.
    bool placed = false;
    for (int attempt = 0; attempt < 64 && !placed; ++attempt) {
      const double az = attempt < 48 ? place.uniform(-std::numbers::pi, std::numbers::pi)
                                     : (attempt - 48) * (2.0 * std::numbers::pi / 16.0);
      box.center = {r * std::cos(az), r * std::sin(az), spec.ground_z + 0.5 * h};
      placed = true;
      for (const Box3& other : scene.boxes) {
        if (std::hypot(box.center[0] - other.center[0], box.center[1] - other.center[1]) <
            footprint) {
          placed = false;
          break;
        }
      }
    }
    require(placed, ErrorCode::Validation, "scene spec: cannot place objects without overlap");
    box.yaw = place.uniform(-std::numbers::pi, std::numbers::pi);
    scene.boxes.push_back(box);
  }

  std::vector<Vec3> xyz;
  std::vector<double> intensity;
  std::vector<int> labels;
  // Face areas of a box: +-x faces (h*w), +-y faces (l*h), +-z faces (l*w).
  const double areas[3] = {h * w, l * h, l * w};
  const double total_area = 2.0 * (areas[0] + areas[1] + areas[2]);
  for (std::size_t b = 0; b < scene.boxes.size(); ++b) {
    const Box3& box = scene.boxes[b];
    const double r = std::hypot(box.center[0], box.center[1]);
    const double mean = spec.points_at_reference * (spec.reference_range_m * spec.reference_range_m) / (r * r);
    std::size_t count = surf.poisson(mean);
    if (count < spec.min_points_per_object) count = spec.min_points_per_object;
    for (std::size_t i = 0; i < count; ++i) {
      double pick = surf.uniform() * total_area;
      int face = 0;
      while (face < 2 && pick >= 2.0 * areas[face]) {
        pick -= 2.0 * areas[face];
        ++face;
      }
      const double sign = surf.uniform() < 0.5 ? -1.0 : 1.0;
      Vec3 local{surf.uniform(-0.5, 0.5) * l, surf.uniform(-0.5, 0.5) * w,
                 surf.uniform(-0.5, 0.5) * h};
      if (face == 0) local[0] = sign * 0.5 * l;
      if (face == 1) local[1] = sign * 0.5 * w;
      if (face == 2) local[2] = sign * 0.5 * h;
      const Vec3 world = rotate_z(local, box.yaw);
      xyz.push_back({box.center[0] + world[0], box.center[1] + world[1], box.center[2] + world[2]});
      intensity.push_back(surf.uniform(0.3, 1.0));
      labels.push_back(static_cast<int>(b));
    }
  }
  for (std::size_t i = 0; i < spec.noise_points; ++i) {
    const double e = spec.ground_extent_m;
    const Vec3 p{clutter.uniform(-e, e), clutter.uniform(-e, e),
                 spec.ground_z + 0.05 * clutter.normal()};
    int label = -1;
    for (std::size_t b = 0; b < scene.boxes.size(); ++b) {
      if (scene.boxes[b].contains(p)) {
        label = static_cast<int>(b);
        break;
      }
    }
    xyz.push_back(p);
    intensity.push_back(clutter.uniform(0.0, 0.3));
    labels.push_back(label);
  }
  scene.cloud = PointCloud(std::move(xyz), std::move(intensity), 1);
  scene.labels = std::move(labels);
  return scene;
}

void to_json(nlohmann::json& j, const SceneSpec& s) {
  j = nlohmann::json{{"min_range_m", s.min_range_m},
                     {"max_range_m", s.max_range_m},
                     {"num_objects", s.num_objects},
                     {"points_at_reference", s.points_at_reference},
                     {"reference_range_m", s.reference_range_m},
                     {"min_points_per_object", s.min_points_per_object},
                     {"noise_points", s.noise_points},
                     {"ground_z", s.ground_z},
                     {"ground_extent_m", s.ground_extent_m},
                     {"object_size", s.object_size},
                     {"fixed_ranges", s.fixed_ranges}};
}

void from_json(const nlohmann::json& j, SceneSpec& s) {
  SceneSpec d;
  s.min_range_m = j.value("min_range_m", d.min_range_m);
  s.max_range_m = j.value("max_range_m", d.max_range_m);
  s.num_objects = j.value("num_objects", d.num_objects);
  s.points_at_reference = j.value("points_at_reference", d.points_at_reference);
  s.reference_range_m = j.value("reference_range_m", d.reference_range_m);
  s.min_points_per_object = j.value("min_points_per_object", d.min_points_per_object);
  s.noise_points = j.value("noise_points", d.noise_points);
  s.ground_z = j.value("ground_z", d.ground_z);
  s.ground_extent_m = j.value("ground_extent_m", d.ground_extent_m);
  s.object_size = j.value("object_size", d.object_size);
  s.fixed_ranges = j.value("fixed_ranges", d.fixed_ranges);
}

void to_json(nlohmann::json& j, const Box3& b) {
  j = nlohmann::json{{"center", b.center}, {"length", b.length}, {"height", b.height},
                     {"width", b.width},   {"yaw", b.yaw},       {"class_id", b.class_id}};
}

void from_json(const nlohmann::json& j, Box3& b) {
  b.center = j.at("center").get<Vec3>();
  b.length = j.at("length").get<double>();
  b.height = j.at("height").get<double>();
  b.width = j.at("width").get<double>();
  b.yaw = j.at("yaw").get<double>();
  b.class_id = j.value("class_id", 1);
  require(b.length > 0 && b.height > 0 && b.width > 0, ErrorCode::Format,
          "scene json: degenerate box size");
}

nlohmann::json scene_to_json(const SyntheticScene& scene) {
  nlohmann::json xyz = nlohmann::json::array();
  for (const Vec3& p : scene.cloud.xyz()) xyz.push_back(p);
  std::vector<double> feats(scene.cloud.features().begin(), scene.cloud.features().end());
  return nlohmann::json{{"format", "dpn-scene"},
                        {"version", 1},
                        {"seed", scene.seed},
                        {"generator", scene.spec},
                        {"xyz", std::move(xyz)},
                        {"intensity", std::move(feats)},
                        {"labels", scene.labels},
                        {"boxes", scene.boxes}};
}

SyntheticScene scene_from_json(const nlohmann::json& j) {
  try {
    require(j.value("format", std::string{}) == "dpn-scene", ErrorCode::Format,
            "scene json: missing format tag");
    SyntheticScene scene;
    scene.seed = j.value("seed", std::uint64_t{0});
    scene.spec = j.value("generator", SceneSpec{});
    std::vector<Vec3> xyz = j.at("xyz").get<std::vector<Vec3>>();
    std::vector<double> intensity = j.at("intensity").get<std::vector<double>>();
    const std::size_t fdim = xyz.empty() ? 1 : intensity.size() / xyz.size();
    scene.cloud = PointCloud(std::move(xyz), std::move(intensity), fdim);
    scene.labels = j.at("labels").get<std::vector<int>>();
    scene.boxes = j.at("boxes").get<std::vector<Box3>>();
    require(scene.labels.size() == scene.cloud.size(), ErrorCode::Format,
            "scene json: labels not aligned with points");
    return scene;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::Format, std::string("scene json: ") + e.what());
  }
}

}  // namespace dpn
