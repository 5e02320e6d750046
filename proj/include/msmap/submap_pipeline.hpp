#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "msmap/error.hpp"
#include "msmap/loop_closure.hpp"
#include "msmap/pose_graph.hpp"
#include "msmap/registration.hpp"
#include "msmap/submap.hpp"

namespace msmap {

struct SlamConfig {
  double submap_translation = 20.0;  // m
  double submap_rotation = 0.7;      // rad
  double map_voxel = 0.1;

  // free-space contradiction update
  double dynamic_increment = 0.2;
  double dynamic_cut = 0.6;
  /// A new ray contradicts a stored point when it passes within this
  /// perpendicular distance of it and ends beyond it by the margin. Near the
  /// sensor the distance shrinks to range * angular tolerance so that
  /// neighbouring beams of one sweep never contradict each other.
  double free_space_tolerance = 0.08;
  double free_space_angular_tolerance = 0.008;  // rad, just under the 0.5 deg azimuth step
  double free_space_margin = 0.5;
  double free_space_relative_margin = 0.1;

  IcpConfig tracking_icp;
  double tracking_min_overlap = 0.2;
  double tracking_source_voxel = 0.4;
  double tracking_target_voxel = 0.3;
  double tracking_keep_radius = 40.0;  // target carried across submap switches
  int tracking_refresh_scans = 1;      // target index rebuilt every this many scans
  std::size_t normal_k = 10;
  /// Tracking-target normals see one or two rings at a time, so they use a
  /// wider neighborhood.
  std::size_t tracking_normal_k = 20;
  double tracking_max_condition = 1e6;

  double odometry_sigma_translation = 0.05;
  double odometry_sigma_rotation = 0.01;

  bool intra_loop_closure = true;
  LoopClosureConfig loop;
  OptimizerConfig optimizer;

  // Test knob: perturbation folded into every new submap origin, emulating
  // odometry drift. Constant part plus zero-mean noise.
  double drift_yaw = 0.0;
  double drift_translation = 0.0;
  double drift_noise_yaw = 0.0;
  double drift_noise_translation = 0.0;
  std::uint64_t drift_seed = 0;

  /// Throws InvalidConfig.
  void validate() const;
};

/// True iff relative(origin, current) exceeds either threshold.
bool should_finish_submap(const Pose& origin, const Pose& current_pose, double t_thresh, double r_thresh);

/// Pose of `scan` in the submap frame by ICP against the submap's live
/// cloud. An empty submap returns `predicted` unchanged. Throws TrackingLost.
Pose track_scan(const Submap& submap, const Scan& scan, const Pose& predicted, const SlamConfig& cfg);

/// Adds `scan` at `pose` (submap frame): the free-space update runs on the
/// existing points first, then the voxel-downsampled scan is appended.
Submap integrate_scan(const Submap& submap, const Scan& scan, const Pose& pose, const SlamConfig& cfg);

/// Normals over live points, oriented toward their sensor origins.
void finalize_submap(Submap& submap, std::size_t k);

struct SessionResult {
  SessionGraph graph;
  /// Set when the stream stopped early; `graph` then holds everything up
  /// to the failing scan.
  std::optional<Error> error;
  /// Session-frame pose of every tracked scan.
  std::vector<ScanPose> trajectory;
  std::size_t intra_candidates = 0;
  std::size_t rejected_candidates = 0;
};

/// Scan poses in the session frame: origin of the owning submap composed
/// with the in-submap pose.
std::vector<ScanPose> session_trajectory(const SessionGraph& graph);

/// Single-session front end plus intra-session loop closure. Loop detection
/// and optimization run each time a submap is finished.
SessionResult run_session(std::uint32_t session, std::span<const Scan> scans, const SlamConfig& cfg);

}  // namespace msmap
