#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <numbers>
#include <span>
#include <vector>

#include "msmap/cloud.hpp"
#include "msmap/pose.hpp"
#include "msmap/submap.hpp"

namespace msmap {

struct DynamicConfig {
  double d_beta = 0.2;  // seed pair distance
  double grow_distance = 0.3;
  double grow_normal_angle = 25.0 * std::numbers::pi / 180.0;
  /// A point only joins a common region when the other cloud has a point
  /// this close, so growth stops at the edge of areas seen by one session.
  double grow_support = 0.5;
  double voxel = 0.04;
  double height_limit = 2.0;
  /// Submap frames sit at the sensor; height above ground is local z plus this.
  double sensor_height = 1.8;
  /// Voxels within this distance of a ray's end are not counted as free.
  double end_margin = 0.2;
  std::size_t normal_k = 10;

  void validate() const;
};

/// Ids index the submaps' clouds; only live points take part.
struct PartitionResult {
  std::vector<std::uint32_t> common_current;
  std::vector<std::uint32_t> common_history;
  std::vector<std::uint32_t> complement_current;
  std::vector<std::uint32_t> complement_history;
  /// Mutual nearest pairs (current id, history id) within d_beta.
  std::vector<std::pair<std::uint32_t, std::uint32_t>> seeds;
};

/// `align` maps history-frame points into the current frame, i.e.
/// relative(x_current, x_history). Throws EmptyCloud.
PartitionResult partition(const Submap& current, const Submap& history, const Pose& align, const DynamicConfig& cfg);

/// Voxels visited by the segment a -> b, in order, both end voxels included.
/// Steps one face crossing at a time.
std::vector<VoxelKey> traverse_voxels(const Vec3& a, const Vec3& b, double voxel);
/// Callback form; stops early when `visit` returns false.
void traverse_voxels(const Vec3& a, const Vec3& b, double voxel, const std::function<bool(const VoxelKey&)>& visit);

struct VoxelMap {
  double voxel = 0.04;
  /// Point ids per occupied voxel, ascending.
  VoxelHashMap<std::vector<std::uint32_t>> cells;
  /// Point ids whose ray first hits each kept voxel (front_voxels only).
  VoxelHashMap<std::vector<std::uint32_t>> rays;

  bool contains(const VoxelKey& k) const { return cells.contains(k); }
  std::vector<VoxelKey> sorted_keys() const;
};

VoxelMap build_voxel_map(const PointCloud& cloud, std::span<const std::uint32_t> ids, double voxel);

/// Occupied voxels of `ids` that are the first occupied voxel on the ray
/// from some point's sensor origin to that point. Throws MissingOrigins.
VoxelMap front_voxels(const PointCloud& cloud, std::span<const std::uint32_t> ids, std::span<const Vec3f> origins,
                      double voxel);

struct DynamicLabels {
  std::vector<std::uint32_t> dynamic;  // history ids
  std::vector<std::uint32_t> mend;     // current ids
  std::vector<std::uint32_t> coarse;   // history ids hit by rays before growing
  /// Current ids contradicted by history free space; reported only.
  std::vector<std::uint32_t> symmetric;
};

/// Rays to the current complement's front voxels that cross history front
/// voxels mark those history points; the marks are grown over the history
/// complement and filtered by height. Throws MissingOrigins.
DynamicLabels detect_dynamics(const PartitionResult& part, const Submap& current, const Submap& history,
                              const Pose& align, const DynamicConfig& cfg);

/// Clears the dynamic points and appends the mend points in the history
/// frame. Their sensor origins come along as extra scan poses that keep the
/// current session's scan ids.
Submap update_history_submap(const Submap& history, const DynamicLabels& labels, const Submap& current,
                             const Pose& align);

/// Binary little-endian PLY of every point with a `label` property
/// (0 static, 1 dynamic, 2 mended); `labels` has one entry per point.
void write_labeled_ply(std::ostream& out, const PointCloud& cloud, std::span<const std::uint8_t> labels);

}  // namespace msmap
