#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "msmap/submap.hpp"

namespace msmap::sim {

using Vec2 = Eigen::Vector2d;

enum class PointLabel : std::uint8_t { Static = 0, LowDynamic = 1, HighDynamic = 2 };

/// Yaw-oriented box; `center` is the volume center, `size` full extents.
struct Box {
  Vec3 center;
  Vec3 size;
  double yaw = 0.0;
};
/// Vertical cylinder spanning [zmin, zmax].
struct Cylinder {
  Vec2 center;
  double radius = 0.0;
  double zmin = 0.0;
  double zmax = 0.0;
};
/// Infinite plane through `point`.
struct Plane {
  Vec3 point;
  Vec3 normal;
};

using Shape = std::variant<Box, Cylinder, Plane>;

struct Primitive {
  Shape shape;
  PointLabel label = PointLabel::Static;
  std::uint32_t object_id = 0;
};

struct Placement {
  Vec2 position;
  double yaw = 0.0;
};

/// Static within a session, may move or vanish between sessions.
struct LowDynamicObject {
  std::uint32_t id = 0;
  Vec3 size;
  double clearance = 0.3;  // gap between ground and box bottom
  std::map<std::uint32_t, std::optional<Placement>> placements;
};

/// Box moving linearly from `start` to `end` during [t0, t1] seconds of one
/// session; absent outside that window.
struct Mover {
  std::uint32_t id = 0;
  std::uint32_t session = 0;
  Vec3 size;
  double clearance = 0.3;
  Vec2 start, end;
  double t0 = 0.0, t1 = 0.0;
};

struct WorldSpec {
  std::uint64_t seed = 0;  // noise stream
  std::uint32_t sessions = 1;
  std::vector<Primitive> statics;
  std::vector<LowDynamicObject> low_dynamic;
  std::vector<Mover> movers;

  /// Throws InvalidConfig (missing placement entry, bad sizes).
  void validate() const;
};

struct SensorModel {
  std::uint32_t rings = 16;
  double min_elevation_deg = -15.0;
  double max_elevation_deg = 15.0;
  double azimuth_resolution_deg = 0.5;
  double min_range = 0.5;
  double max_range = 50.0;
  double range_noise = 0.01;
  double mount_height = 1.8;

  std::vector<double> ring_elevations() const;
};

struct TrajectorySpec {
  std::vector<Vec2> waypoints;
  double speed = 1.0;      // m/s
  double scan_rate = 1.0;  // scans per second
  double corner_radius = 6.0;
  double lateral_offset = 0.0;
  double start_offset = 0.0;
  SensorModel sensor;

  double spacing() const { return speed / scan_rate; }
  void validate() const;
};

struct RenderedScan {
  Scan scan;
  std::vector<PointLabel> labels;
  std::vector<std::uint32_t> object_ids;
};

/// Every primitive present in `session` at `time` seconds.
std::vector<Primitive> resolve_primitives(const WorldSpec& world, std::uint32_t session, double time);

/// Ray-casts one sweep from `sensor_pose` (world frame). Points come back in
/// the sensor frame with Gaussian range noise drawn from a stream keyed by
/// (world seed, session, scan id).
RenderedScan render_scan(const WorldSpec& world, std::uint32_t session, const Pose& sensor_pose,
                         const SensorModel& sensor, double time = 0.0, std::uint32_t scan_id = 0);

/// Sample poses along the filleted waypoint path (world frame, z = mount
/// height). The path end is always included.
std::vector<Pose> trajectory_poses(const TrajectorySpec& trajectory);
/// Dense path points (spacing ~`step`) along the filleted polyline.
std::vector<Vec2> path_points(const TrajectorySpec& trajectory, double step);

struct SimulatedSession {
  std::uint32_t session = 0;
  std::vector<Scan> scans;
  std::vector<Pose> ground_truth;
  std::vector<std::vector<PointLabel>> labels;
  std::vector<std::vector<std::uint32_t>> object_ids;
};

SimulatedSession generate_session(const WorldSpec& world, const TrajectorySpec& trajectory, std::uint32_t session);

/// Plain-text formats, see README.
WorldSpec parse_world(std::istream& in);
void write_world(std::ostream& out, const WorldSpec& world);
TrajectorySpec parse_trajectory(std::istream& in);
void write_trajectory(std::ostream& out, const TrajectorySpec& trajectory);

/// Procedural street scene around a route: buildings, trees with canopies
/// above 2 m, poles, hedges, parked cars. `relocated_clusters` groups of
/// parked cars near the path change placement between session 1 and 2.
struct CampusOptions {
  std::uint64_t seed = 1;
  std::uint32_t sessions = 2;
  int relocated_clusters = 0;
  int cars_per_cluster = 4;
  int movers_per_session = 0;
  double road_clearance = 4.0;
};
WorldSpec generate_campus(const TrajectorySpec& route, const CampusOptions& options);

/// Rectangle loop (counter-clockwise) starting mid-way along the bottom
/// edge, so the first and last sample share heading.
std::vector<Vec2> rectangle_loop(double width, double height, const Vec2& center = Vec2::Zero());

}  // namespace msmap::sim
