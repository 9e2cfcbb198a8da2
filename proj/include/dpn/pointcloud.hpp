#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace dpn {

class Rng;

using Vec3 = std::array<double, 3>;

inline double squared_distance(const Vec3& a, const Vec3& b) noexcept {
  const double dx = a[0] - b[0];
  const double dy = a[1] - b[1];
  const double dz = a[2] - b[2];
  return dx * dx + dy * dy + dz * dz;
}

/// N points with optional row-aligned per-point attributes (N x feature_dim).
class PointCloud {
 public:
  PointCloud() = default;
  PointCloud(std::vector<Vec3> xyz, std::vector<double> features, std::size_t feature_dim);

  std::size_t size() const noexcept { return xyz_.size(); }
  bool empty() const noexcept { return xyz_.empty(); }
  std::size_t feature_dim() const noexcept { return feature_dim_; }

  std::span<const Vec3> xyz() const noexcept { return xyz_; }
  std::span<const double> features() const noexcept { return features_; }
  std::span<const double> features_of(std::size_t i) const noexcept {
    return std::span<const double>(features_).subspan(i * feature_dim_, feature_dim_);
  }

  PointCloud select(std::span<const std::size_t> index) const;
  PointCloud translated(const Vec3& offset) const;

 private:
  std::vector<Vec3> xyz_;
  std::vector<double> features_;
  std::size_t feature_dim_ = 0;
};

/// KITTI velodyne layout: little-endian float32 (x, y, z, intensity), no header.
PointCloud read_kitti_bin(const std::filesystem::path& path);
PointCloud parse_kitti_bin(std::span<const std::uint8_t> bytes);
void write_kitti_bin(const PointCloud& cloud, const std::filesystem::path& path);
std::vector<std::uint8_t> encode_kitti_bin(const PointCloud& cloud);

/// Uniform subset without replacement when N >= n, otherwise every point once
/// plus uniform draws with replacement up to n. Output order is random.
PointCloud sample_n_points(const PointCloud& cloud, std::size_t n, Rng& rng);

struct Box3 {
  Vec3 center{};
  double length = 0, height = 0, width = 0;  // along local x, z, y
  double yaw = 0;                            // about +z
  int class_id = 0;

  /// Inclusive test in the box's yaw-aligned frame, with `eps` slack for
  /// rounding of points generated exactly on a face.
  bool contains(const Vec3& p, double eps = 1e-9) const noexcept;
};

struct SceneSpec {
  double min_range_m = 5.0;
  double max_range_m = 60.0;
  std::size_t num_objects = 6;
  /// Expected surface points on an object at `reference_range_m`; falls off as 1/r^2.
  double points_at_reference = 1500.0;
  double reference_range_m = 10.0;
  std::size_t min_points_per_object = 8;
  std::size_t noise_points = 2000;
  double ground_z = -1.7;
  double ground_extent_m = 60.0;
  Vec3 object_size{3.9, 1.56, 1.6};  // l, h, w
  /// When non-empty, objects are placed at exactly these ranges (num_objects ignored).
  std::vector<double> fixed_ranges;

  void validate() const;
};

struct SyntheticScene {
  PointCloud cloud;                 // features: intensity in [0, 1]
  std::vector<Box3> boxes;
  std::vector<int> labels;          // per point: box index or -1
  SceneSpec spec;
  std::uint64_t seed = 0;

  std::size_t points_in_box(std::size_t box) const;
};

SyntheticScene generate_scene(const SceneSpec& spec, std::uint64_t seed);

void to_json(nlohmann::json& j, const SceneSpec& s);
void from_json(const nlohmann::json& j, SceneSpec& s);
void to_json(nlohmann::json& j, const Box3& b);
void from_json(const nlohmann::json& j, Box3& b);
nlohmann::json scene_to_json(const SyntheticScene& scene);
SyntheticScene scene_from_json(const nlohmann::json& j);

}  // namespace dpn
