#pragma once

#include <algorithm>
#include <cstdint>
#include <span>
#include <vector>

#include "msmap/cloud.hpp"
#include "msmap/pose.hpp"
#include "msmap/pose_graph.hpp"

namespace msmap {

/// One sensor sweep, points in the sensor frame (sensor origin at zero).
/// Kept in double precision so yaw-rotated copies bin identically.
struct Scan {
  std::uint32_t id = 0;
  std::vector<Vec3> points;
};

/// Pose of one integrated scan inside its submap frame.
struct ScanPose {
  std::uint32_t scan_id = 0;
  Pose pose;
};

/// Accumulated cloud in the frame of its origin pose. `cloud.origin_index`
/// addresses `scan_origins`; `scan_poses[k].pose.translation()` equals
/// `scan_origins[k]`.
struct Submap {
  SubmapId id;
  Pose origin;
  PointCloud cloud;
  std::vector<Vec3f> scan_origins;
  std::vector<ScanPose> scan_poses;
  std::uint32_t scan_count = 0;
  std::vector<float> dynamic_probability;

  /// Throws InvalidConfig on a broken per-point or origin invariant.
  void check_invariants() const;
  /// Poses of the scans integrated into this submap; entries past
  /// `scan_count` are sensor origins transferred from a later session.
  std::span<const ScanPose> own_scan_poses() const {
    return {scan_poses.data(), std::min<std::size_t>(scan_count, scan_poses.size())};
  }
  /// Live points with normals-ready layout for registration.
  PointCloud live_cloud() const;
};

bool operator==(const Submap& a, const Submap& b);

struct SessionGraph {
  std::uint32_t session = 0;
  std::vector<Submap> submaps;
  std::vector<LoopEdge> odometry_edges;
  std::vector<LoopEdge> loop_edges;

  const Submap* find(const SubmapId& id) const;
  /// Graph over this session's origins, first origin fixed.
  PoseGraph pose_graph() const;
  /// Copies optimized origins back into the submaps.
  void apply(const PoseGraph& graph);
  bool operator==(const SessionGraph&) const = default;
};

}  // namespace msmap
