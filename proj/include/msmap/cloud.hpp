#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "msmap/kdtree.hpp"
#include "msmap/pose.hpp"

namespace msmap {

/// Point set with optional per-point normals and sensor-origin indices, plus
/// a live mask. A zero normal marks a point whose normal is undefined.
struct PointCloud {
  std::vector<Vec3f> points;
  std::vector<Vec3f> normals;
  std::vector<std::uint16_t> origin_index;
  std::vector<std::uint8_t> live;

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
  bool has_normals() const { return !normals.empty(); }
  bool has_origins() const { return !origin_index.empty(); }

  void push_back(const Vec3f& p) {
    points.push_back(p);
    live.push_back(1);
  }
  std::size_t live_count() const;

  /// Throws InvalidConfig when a per-point array disagrees in length.
  void check_invariants() const;
};

bool operator==(const PointCloud& a, const PointCloud& b);

/// Copy of `cloud` holding only the points at `ids`, all fields carried.
PointCloud select(const PointCloud& cloud, std::span<const std::uint32_t> ids);
/// Ids of points whose live flag is set.
std::vector<std::uint32_t> live_ids(const PointCloud& cloud);
/// Points (and normals) mapped through `pose`; other fields carried.
PointCloud transformed(const PointCloud& cloud, const Pose& pose);

/// Immutable exact nearest-neighbor index over a snapshot of a cloud.
class SpatialIndex {
 public:
  SpatialIndex() = default;
  /// Throws EmptyCloud.
  explicit SpatialIndex(std::span<const Vec3f> points);
  explicit SpatialIndex(const PointCloud& cloud) : SpatialIndex(std::span<const Vec3f>(cloud.points)) {}

  std::size_t size() const { return tree_.size(); }
  Vec3f point(std::uint32_t id) const {
    const float* p = tree_.point(id);
    return {p[0], p[1], p[2]};
  }

  /// Nearest point id and Euclidean distance.
  Neighbor nearest(const Vec3f& query) const;
  /// Nearest within `max_distance`; id max uint32 and infinite distance
  /// when none.
  Neighbor nearest(const Vec3f& query, double max_distance) const;
  /// k nearest sorted by distance (Euclidean).
  std::vector<Neighbor> knn(const Vec3f& query, std::size_t k) const;
  /// Ids within Euclidean distance r (inclusive), ascending.
  std::vector<std::uint32_t> radius_query(const Vec3f& query, double r) const;

 private:
  KdTree<float, 3> tree_;
};

/// Unit normals from the smallest principal axis of each point's k nearest
/// neighbors (self included). Neighborhoods whose largest/middle eigenvalue
/// ratio exceeds `max_condition` get a zero normal. When the cloud carries origin
/// indices and `origins` is given, normals face their sensor origin.
/// Throws TooFewPoints when the cloud has fewer than k points.
PointCloud estimate_normals(const PointCloud& cloud, std::size_t k = 10,
                            std::span<const Vec3f> origins = {}, double max_condition = 1e6);

/// Normals for `ids` only, computed against `index` built over `cloud`.
void estimate_normals_for(PointCloud& cloud, const SpatialIndex& index, std::span<const std::uint32_t> ids,
                          std::size_t k, std::span<const Vec3f> origins = {}, double max_condition = 1e6);

struct VoxelKey {
  std::int32_t x, y, z;
  bool operator==(const VoxelKey&) const = default;
  auto operator<=>(const VoxelKey&) const = default;
};

struct VoxelKeyHash {
  std::size_t operator()(const VoxelKey& k) const noexcept {
    std::uint64_t h = std::uint64_t(std::uint32_t(k.x)) * 0x9E3779B185EBCA87ull;
    h ^= std::uint64_t(std::uint32_t(k.y)) * 0xC2B2AE3D27D4EB4Full + (h << 6) + (h >> 2);
    h ^= std::uint64_t(std::uint32_t(k.z)) * 0x165667B19E3779F9ull + (h << 6) + (h >> 2);
    return static_cast<std::size_t>(h);
  }
};

using VoxelSet = std::unordered_set<VoxelKey, VoxelKeyHash>;
template <typename T>
using VoxelHashMap = std::unordered_map<VoxelKey, T, VoxelKeyHash>;

inline VoxelKey voxel_of(const Vec3& p, double size) {
  return {static_cast<std::int32_t>(std::floor(p.x() / size)), static_cast<std::int32_t>(std::floor(p.y() / size)),
          static_cast<std::int32_t>(std::floor(p.z() / size))};
}
inline VoxelKey voxel_of(const Vec3f& p, double size) { return voxel_of(Vec3(p.cast<double>()), size); }

/// Ids of the first point (in input order) falling in each occupied voxel,
/// restricted to live points.
std::vector<std::uint32_t> voxel_downsample_ids(const PointCloud& cloud, double size);
PointCloud voxel_downsample(const PointCloud& cloud, double size);

}  // namespace msmap
