#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "msmap/loop_closure.hpp"
#include "msmap/pose.hpp"
#include "msmap/simulator.hpp"
#include "msmap/submap.hpp"

namespace msmap {

struct TrajectoryError {
  double rms = 0.0;
  double mean = 0.0;
  double max = 0.0;
  std::size_t count = 0;
  /// Rigid transform taking estimated positions onto the truth.
  Pose alignment;
};

/// Absolute trajectory error over scan positions after the least-squares
/// rigid alignment (no scale). `truth` is indexed by scan id. Throws
/// InvalidConfig when a scan id has no truth entry or fewer than 3 poses match.
TrajectoryError absolute_trajectory_error(std::span<const ScanPose> estimate, std::span<const Pose> truth);

/// Same, without alignment: estimate and truth share a frame.
TrajectoryError trajectory_error_in_frame(std::span<const ScanPose> estimate, std::span<const Pose> truth);

/// True sensor positions of a submap's scans, `truth` indexed by scan id.
std::vector<Vec3> true_scan_positions(const Submap& submap, std::span<const Pose> truth);

struct VerdictTable {
  std::size_t total = 0;
  std::size_t correct = 0;  // matched, every matched submap really nearby
  std::size_t undefined = 0;
  std::size_t wrong = 0;
};

/// A Matched verdict counts as correct when each matched history submap has
/// a scan within `radius` (true positions) of some scan of the judged
/// submap. `truth` maps session id to that session's ground truth.
VerdictTable score_verdicts(std::span<const Verdict> verdicts, const std::map<SubmapId, const Submap*>& submaps,
                            const std::map<std::uint32_t, std::vector<Pose>>& truth, double radius = 10.0);

struct DynamicScore {
  std::size_t positives = 0;        // points on objects gone from their old place
  std::size_t true_positives = 0;
  std::size_t low_static = 0;       // other points at most `height_limit` above ground
  std::size_t low_false_positives = 0;
  std::size_t high_removals = 0;    // labeled points above `height_limit`
  double recall() const { return positives ? double(true_positives) / double(positives) : 1.0; }
  double precision() const;
  double low_false_positive_rate() const { return low_static ? double(low_false_positives) / double(low_static) : 0.0; }
};

/// Scores `dynamic` (history point ids) against the world's low-dynamic
/// objects: a live point within `margin` of an object that is absent or
/// placed elsewhere in `current_session` is a positive. `to_world` maps the
/// submap frame into the world frame (ground at z = 0).
DynamicScore score_dynamics(const Submap& history, std::span<const std::uint32_t> dynamic, const Pose& to_world,
                            const sim::WorldSpec& world, std::uint32_t history_session, std::uint32_t current_session,
                            double height_limit = 2.0, double margin = 0.1);
void accumulate(DynamicScore& into, const DynamicScore& part);

/// Box of a low-dynamic object as placed in `session`, or nullopt when absent.
std::optional<sim::Box> placed_object(const sim::LowDynamicObject& o, std::uint32_t session);

/// Ordered key-value records, written one `key value` per line; the
/// human-readable form is a table built from the same records.
using Report = std::vector<std::pair<std::string, std::string>>;
std::string format_key_values(const Report& report);
/// Verdict table with the column headings total / correctly matched /
/// undefined / wrongly matched.
std::string format_verdict_table(const VerdictTable& t);

}  // namespace msmap
