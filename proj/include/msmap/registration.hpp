#pragma once

#include <span>
#include <vector>

#include "msmap/cloud.hpp"
#include "msmap/pose.hpp"

namespace msmap {

enum class IcpVariant { PointToPoint, PointToPlane };

struct IcpConfig {
  int max_iterations = 50;
  /// Correspondence gate, ramped linearly from initial to final over the
  /// first `schedule_iterations` iterations and held afterwards.
  double max_correspondence_initial = 2.0;
  double max_correspondence_final = 0.5;
  int schedule_iterations = 10;
  double convergence_epsilon = 1e-4;
  IcpVariant variant = IcpVariant::PointToPlane;
  double trim_ratio = 0.1;
  /// Gate used for the overlap ratio reported in IcpResult.
  double overlap_distance = 0.3;

  /// Throws InvalidConfig.
  void validate() const;
  double gate(int iteration) const;
};

struct IcpResult {
  Pose transform;
  double rms_residual = 0.0;
  double overlap_ratio = 0.0;
  bool converged = false;
  int iterations = 0;
  /// Trimmed, gate-truncated mean squared residual after each accepted step
  /// (first entry is the initial guess). Non-increasing.
  std::vector<double> cost_trace;
};

/// Target cloud with a prebuilt index; reuse it across many registrations.
class RegistrationTarget {
 public:
  /// Throws EmptyCloud.
  explicit RegistrationTarget(PointCloud cloud);
  /// Adopts an index already built over `cloud`.
  RegistrationTarget(PointCloud cloud, SpatialIndex index);

  const PointCloud& cloud() const { return cloud_; }
  const SpatialIndex& index() const { return index_; }

 private:
  PointCloud cloud_;
  SpatialIndex index_;
};

/// Aligns `source` onto `target`: the returned transform maps source-frame
/// points into the target frame. Throws EmptyCloud / NoCorrespondences.
IcpResult icp(const PointCloud& source, const RegistrationTarget& target, const Pose& initial_guess,
              const IcpConfig& cfg);
IcpResult icp(const PointCloud& source, const PointCloud& target, const Pose& initial_guess, const IcpConfig& cfg);

/// Fraction of `source` points that, mapped by `transform`, have a target
/// point within `d_overlap`. Throws EmptyCloud.
double overlap_ratio(const PointCloud& source, const RegistrationTarget& target, const Pose& transform,
                     double d_overlap);
double overlap_ratio(const PointCloud& source, const PointCloud& target, const Pose& transform, double d_overlap);

/// Runs icp from every seed and keeps the best result ordered by
/// (converged, overlap_ratio, -rms_residual). Rethrows the last failure only
/// when every seed fails.
IcpResult multi_start_icp(const PointCloud& source, const RegistrationTarget& target, std::span<const Pose> seeds,
                          const IcpConfig& cfg);
IcpResult multi_start_icp(const PointCloud& source, const PointCloud& target, std::span<const Pose> seeds,
                          const IcpConfig& cfg);

/// `prior` followed by yaw rotations in the source frame, `count` evenly
/// spaced angles starting at zero.
std::vector<Pose> yaw_variants(const Pose& prior, int count);

/// True when `a` ranks above `b` in multi-start ordering.
bool better_registration(const IcpResult& a, const IcpResult& b);

}  // namespace msmap
