#include "msmap/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <numbers>
#include <ostream>
#include <random>
#include <sstream>

#include "msmap/error.hpp"

namespace msmap::sim {

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;
constexpr double kEps = 1e-9;

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

Vec2 left_normal(const Vec2& d) { return {-d.y(), d.x()}; }

// ---- ray / primitive intersection -------------------------------------------

double intersect(const Box& box, const Vec3& o, const Vec3& d) {
  const double c = std::cos(-box.yaw), s = std::sin(-box.yaw);
  const Vec3 rel = o - box.center;
  const Vec3 lo(c * rel.x() - s * rel.y(), s * rel.x() + c * rel.y(), rel.z());
  const Vec3 ld(c * d.x() - s * d.y(), s * d.x() + c * d.y(), d.z());
  const Vec3 half = 0.5 * box.size;
  double tmin = -std::numeric_limits<double>::infinity();
  double tmax = std::numeric_limits<double>::infinity();
  for (int i = 0; i < 3; ++i) {
    if (std::abs(ld[i]) < 1e-12) {
      if (std::abs(lo[i]) > half[i]) return -1.0;
      continue;
    }
    double t1 = (-half[i] - lo[i]) / ld[i];
    double t2 = (half[i] - lo[i]) / ld[i];
    if (t1 > t2) std::swap(t1, t2);
    tmin = std::max(tmin, t1);
    tmax = std::min(tmax, t2);
    if (tmax < tmin) return -1.0;
  }
  if (tmax <= kEps) return -1.0;
  return tmin > kEps ? tmin : tmax;
}

double intersect(const Cylinder& cyl, const Vec3& o, const Vec3& d) {
  double best = std::numeric_limits<double>::infinity();
  const Vec2 w(o.x() - cyl.center.x(), o.y() - cyl.center.y());
  const Vec2 dxy(d.x(), d.y());
  const double a = dxy.squaredNorm();
  if (a > 1e-12) {
    const double b = 2.0 * w.dot(dxy);
    const double c = w.squaredNorm() - cyl.radius * cyl.radius;
    const double disc = b * b - 4.0 * a * c;
    if (disc >= 0.0) {
      const double sq = std::sqrt(disc);
      for (double t : {(-b - sq) / (2.0 * a), (-b + sq) / (2.0 * a)}) {
        const double z = o.z() + t * d.z();
        if (t > kEps && z >= cyl.zmin && z <= cyl.zmax) best = std::min(best, t);
      }
    }
  }
  if (std::abs(d.z()) > 1e-12) {
    for (double zc : {cyl.zmin, cyl.zmax}) {
      const double t = (zc - o.z()) / d.z();
      if (t > kEps && (w + t * dxy).squaredNorm() <= cyl.radius * cyl.radius) best = std::min(best, t);
    }
  }
  return std::isfinite(best) ? best : -1.0;
}

double intersect(const Plane& plane, const Vec3& o, const Vec3& d) {
  const double denom = plane.normal.dot(d);
  if (std::abs(denom) < 1e-12) return -1.0;
  const double t = plane.normal.dot(plane.point - o) / denom;
  return t > kEps ? t : -1.0;
}

double intersect(const Shape& shape, const Vec3& o, const Vec3& d) {
  return std::visit([&](const auto& s) { return intersect(s, o, d); }, shape);
}

/// xy bounding circle; radius < 0 marks unbounded shapes.
std::pair<Vec2, double> bounding_circle(const Shape& shape) {
  if (const auto* b = std::get_if<Box>(&shape)) {
    return {b->center.head<2>(), 0.5 * std::hypot(b->size.x(), b->size.y())};
  }
  if (const auto* c = std::get_if<Cylinder>(&shape)) return {c->center, c->radius};
  return {Vec2::Zero(), -1.0};
}

Box placed_box(const Vec3& size, double clearance, const Vec2& position, double yaw) {
  return {Vec3(position.x(), position.y(), clearance + 0.5 * size.z()), size, yaw};
}

// ---- filleted path ----------------------------------------------------------

struct Segment {
  bool arc = false;
  Vec2 a, b;  // line endpoints
  Vec2 center;
  double radius = 0.0, start_angle = 0.0, sweep = 0.0;
  double length = 0.0;
};

struct Path {
  std::vector<Segment> segments;
  double length = 0.0;

  // position and unit heading at arc length s (clamped)
  std::pair<Vec2, Vec2> at(double s) const {
    s = std::clamp(s, 0.0, length);
    for (const auto& seg : segments) {
      if (s <= seg.length + 1e-12 || &seg == &segments.back()) {
        const double u = std::min(s, seg.length);
        if (!seg.arc) {
          const Vec2 dir = (seg.b - seg.a).normalized();
          return {seg.a + dir * u, dir};
        }
        const double sign = seg.sweep >= 0.0 ? 1.0 : -1.0;
        const double ang = seg.start_angle + sign * u / seg.radius;
        const Vec2 radial(std::cos(ang), std::sin(ang));
        return {seg.center + seg.radius * radial, sign * left_normal(radial)};
      }
      s -= seg.length;
    }
    return {Vec2::Zero(), Vec2::UnitX()};
  }
};

Path build_path(const std::vector<Vec2>& wp, double corner_radius) {
  Path path;
  if (wp.size() < 2) return path;
  Vec2 cursor = wp.front();
  auto add_line = [&](const Vec2& to) {
    const double len = (to - cursor).norm();
    if (len > 1e-12) path.segments.push_back({false, cursor, to, {}, 0, 0, 0, len});
    cursor = to;
  };
  for (std::size_t i = 1; i + 1 < wp.size(); ++i) {
    const Vec2 in = wp[i] - wp[i - 1];
    const Vec2 out = wp[i + 1] - wp[i];
    if (in.norm() < 1e-12 || out.norm() < 1e-12 || corner_radius <= 0.0) {
      add_line(wp[i]);
      continue;
    }
    const Vec2 u = in.normalized(), v = out.normalized();
    const double cross = u.x() * v.y() - u.y() * v.x();
    const double turn = std::atan2(cross, u.dot(v));
    if (std::abs(turn) < 1e-9) {
      add_line(wp[i]);
      continue;
    }
    double tangent = corner_radius * std::tan(std::abs(turn) / 2.0);
    const double limit = 0.5 * std::min(in.norm(), out.norm());
    double radius = corner_radius;
    if (tangent > limit) {
      tangent = limit;
      radius = tangent / std::tan(std::abs(turn) / 2.0);
    }
    const Vec2 t1 = wp[i] - u * tangent;
    const Vec2 t2 = wp[i] + v * tangent;
    add_line(t1);
    const double side = turn > 0.0 ? 1.0 : -1.0;
    const Vec2 center = t1 + side * radius * left_normal(u);
    const Vec2 radial = (t1 - center) / radius;
    Segment arc;
    arc.arc = true;
    arc.center = center;
    arc.radius = radius;
    arc.start_angle = std::atan2(radial.y(), radial.x());
    arc.sweep = turn;
    arc.length = radius * std::abs(turn);
    path.segments.push_back(arc);
    cursor = t2;
  }
  add_line(wp.back());
  for (const auto& s : path.segments) path.length += s.length;
  return path;
}

// ---- text format helpers ----------------------------------------------------

std::vector<std::string> tokens_of(const std::string& line) {
  std::istringstream in(line.substr(0, line.find('#')));
  std::vector<std::string> out;
  for (std::string t; in >> t;) out.push_back(t);
  return out;
}

double number(const std::vector<std::string>& tok, std::size_t i, int line_no) {
  if (i >= tok.size()) throw Error(ErrorCode::ParseError, "line " + std::to_string(line_no) + ": missing field");
  try {
    std::size_t used = 0;
    const double v = std::stod(tok[i], &used);
    if (used != tok[i].size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw Error(ErrorCode::ParseError, "line " + std::to_string(line_no) + ": bad number '" + tok[i] + "'");
  }
}

}  // namespace

std::vector<double> SensorModel::ring_elevations() const {
  std::vector<double> e(rings);
  for (std::uint32_t r = 0; r < rings; ++r) {
    e[r] = rings == 1 ? min_elevation_deg
                      : min_elevation_deg + (max_elevation_deg - min_elevation_deg) * double(r) / double(rings - 1);
  }
  return e;
}

void WorldSpec::validate() const {
  if (sessions == 0) throw Error(ErrorCode::InvalidConfig, "world needs at least one session");
  for (const auto& o : low_dynamic) {
    for (std::uint32_t s = 1; s <= sessions; ++s) {
      if (!o.placements.contains(s)) {
        throw Error(ErrorCode::InvalidConfig,
                    "low-dynamic object " + std::to_string(o.id) + " lacks a placement for session " + std::to_string(s));
      }
    }
    if ((o.size.array() <= 0.0).any()) throw Error(ErrorCode::InvalidConfig, "low-dynamic object with empty size");
  }
}

void TrajectorySpec::validate() const {
  if (!(speed > 0.0) || !(scan_rate > 0.0)) throw Error(ErrorCode::InvalidConfig, "speed and scan rate must be positive");
  if (waypoints.size() < 2) throw Error(ErrorCode::InvalidConfig, "trajectory needs at least two waypoints");
  if (sensor.rings == 0 || !(sensor.azimuth_resolution_deg > 0.0) || !(sensor.max_range > sensor.min_range)) {
    throw Error(ErrorCode::InvalidConfig, "invalid sensor model");
  }
}

std::vector<Primitive> resolve_primitives(const WorldSpec& world, std::uint32_t session, double time) {
  std::vector<Primitive> out = world.statics;
  for (const auto& o : world.low_dynamic) {
    const auto it = o.placements.find(session);
    if (it == o.placements.end() || !it->second) continue;
    out.push_back({placed_box(o.size, o.clearance, it->second->position, it->second->yaw), PointLabel::LowDynamic, o.id});
  }
  for (const auto& m : world.movers) {
    if (m.session != session || time < m.t0 || time > m.t1) continue;
    const double u = m.t1 > m.t0 ? (time - m.t0) / (m.t1 - m.t0) : 0.0;
    const Vec2 pos = m.start + u * (m.end - m.start);
    const Vec2 dir = m.end - m.start;
    out.push_back({placed_box(m.size, m.clearance, pos, std::atan2(dir.y(), dir.x())), PointLabel::HighDynamic, m.id});
  }
  return out;
}

RenderedScan render_scan(const WorldSpec& world, std::uint32_t session, const Pose& sensor_pose,
                         const SensorModel& sensor, double time, std::uint32_t scan_id) {
  const auto prims = resolve_primitives(world, session, time);
  const auto columns = static_cast<std::size_t>(std::llround(360.0 / sensor.azimuth_resolution_deg));
  const Vec3 o = sensor_pose.translation();
  const Mat3 rot = sensor_pose.rotation_matrix();
  const bool upright = rot(2, 2) > 1.0 - 1e-9;
  const double yaw = sensor_pose.yaw();
  const double res = 2.0 * std::numbers::pi / double(columns);

  // per-column candidate lists from xy bounding circles
  std::vector<std::uint32_t> unbounded;
  std::vector<std::vector<std::uint32_t>> by_column(columns);
  for (std::uint32_t i = 0; i < prims.size(); ++i) {
    const auto [center, radius] = bounding_circle(prims[i].shape);
    if (radius < 0.0) {
      unbounded.push_back(i);
      continue;
    }
    const Vec2 rel = center - o.head<2>();
    const double dist = rel.norm();
    if (dist - radius > sensor.max_range) continue;
    if (!upright || dist <= radius + 1e-6) {
      for (auto& col : by_column) col.push_back(i);
      continue;
    }
    const double half = std::asin(std::min(1.0, radius / dist)) + res;
    const double mid = std::atan2(rel.y(), rel.x()) - yaw;
    const auto first = static_cast<long long>(std::floor((mid - half) / res));
    const auto last = static_cast<long long>(std::ceil((mid + half) / res));
    const auto n = static_cast<long long>(columns);
    for (long long c = first; c <= last && c - first < n; ++c) by_column[std::size_t(((c % n) + n) % n)].push_back(i);
  }

  std::mt19937_64 rng(splitmix(world.seed ^ splitmix(std::uint64_t(session) << 32 | scan_id)));
  std::normal_distribution<double> noise(0.0, 1.0);

  RenderedScan out;
  out.scan.id = scan_id;
  const auto elevations = sensor.ring_elevations();
  for (std::size_t c = 0; c < columns; ++c) {
    const double az = double(c) * res;
    for (double elev_deg : elevations) {
      const double e = elev_deg * kDeg;
      const Vec3 dir_s(std::cos(e) * std::cos(az), std::cos(e) * std::sin(az), std::sin(e));
      const Vec3 dir_w = rot * dir_s;
      double best = std::numeric_limits<double>::infinity();
      std::uint32_t hit = 0;
      auto test = [&](std::uint32_t i) {
        const double t = intersect(prims[i].shape, o, dir_w);
        if (t > 0.0 && t < best) {
          best = t;
          hit = i;
        }
      };
      for (auto i : unbounded) test(i);
      for (auto i : by_column[c]) test(i);
      const double sample = sensor.range_noise > 0.0 ? sensor.range_noise * noise(rng) : 0.0;
      if (!(best >= sensor.min_range && best <= sensor.max_range)) continue;
      const double range = best + sample;
      out.scan.points.push_back(dir_s * range);
      out.labels.push_back(prims[hit].label);
      out.object_ids.push_back(prims[hit].object_id);
    }
  }
  return out;
}

std::vector<Vec2> path_points(const TrajectorySpec& trajectory, double step) {
  const Path path = build_path(trajectory.waypoints, trajectory.corner_radius);
  std::vector<Vec2> out;
  for (double s = 0.0; s <= path.length + 1e-9; s += step) out.push_back(path.at(s).first);
  out.push_back(path.at(path.length).first);
  return out;
}

std::vector<Pose> trajectory_poses(const TrajectorySpec& trajectory) {
  trajectory.validate();
  const Path path = build_path(trajectory.waypoints, trajectory.corner_radius);
  const double ds = trajectory.spacing();
  std::vector<double> stations;
  const auto count = static_cast<std::size_t>(std::floor((path.length - trajectory.start_offset) / ds + 1e-9)) + 1;
  for (std::size_t k = 0; k < count; ++k) stations.push_back(trajectory.start_offset + double(k) * ds);
  if (path.length - stations.back() > 1e-6) stations.push_back(path.length);

  std::vector<Pose> poses;
  for (double s : stations) {
    auto [pos, heading] = path.at(s);
    pos += trajectory.lateral_offset * left_normal(heading);
    poses.push_back(Pose::from_yaw(std::atan2(heading.y(), heading.x()),
                                   Vec3(pos.x(), pos.y(), trajectory.sensor.mount_height)));
  }
  return poses;
}

SimulatedSession generate_session(const WorldSpec& world, const TrajectorySpec& trajectory, std::uint32_t session) {
  world.validate();
  SimulatedSession out;
  out.session = session;
  out.ground_truth = trajectory_poses(trajectory);
  for (std::uint32_t k = 0; k < out.ground_truth.size(); ++k) {
    RenderedScan r = render_scan(world, session, out.ground_truth[k], trajectory.sensor, double(k) / trajectory.scan_rate, k);
    out.scans.push_back(std::move(r.scan));
    out.labels.push_back(std::move(r.labels));
    out.object_ids.push_back(std::move(r.object_ids));
  }
  return out;
}

std::vector<Vec2> rectangle_loop(double width, double height, const Vec2& center) {
  const double hw = width / 2.0, hh = height / 2.0;
  return {center + Vec2(0, -hh), center + Vec2(hw, -hh), center + Vec2(hw, hh),
          center + Vec2(-hw, hh), center + Vec2(-hw, -hh), center + Vec2(0, -hh)};
}

// ---- text formats -----------------------------------------------------------

WorldSpec parse_world(std::istream& in) {
  WorldSpec world;
  std::string line;
  int line_no = 0;
  bool header = false;
  std::map<std::uint32_t, std::size_t> parked;
  while (std::getline(in, line)) {
    ++line_no;
    const auto tok = tokens_of(line);
    if (tok.empty()) continue;
    const auto num = [&](std::size_t i) { return number(tok, i, line_no); };
    const auto id_at = [&](std::size_t i) { return static_cast<std::uint32_t>(num(i)); };
    const std::string& key = tok[0];
    if (!header) {
      if (key != "msmap-world") throw Error(ErrorCode::ParseError, "line " + std::to_string(line_no) + ": missing 'msmap-world' header");
      header = true;
      continue;
    }
    if (key == "seed") {
      world.seed = static_cast<std::uint64_t>(std::stoull(tok.at(1)));
    } else if (key == "sessions") {
      world.sessions = id_at(1);
    } else if (key == "ground") {
      world.statics.push_back({Plane{Vec3(0, 0, num(1)), Vec3::UnitZ()}, PointLabel::Static, 0});
    } else if (key == "plane") {
      world.statics.push_back({Plane{Vec3(num(1), num(2), num(3)), Vec3(num(4), num(5), num(6)).normalized()},
                               PointLabel::Static, id_at(7)});
    } else if (key == "box") {
      world.statics.push_back(
          {Box{Vec3(num(1), num(2), num(3)), Vec3(num(4), num(5), num(6)), num(7) * kDeg}, PointLabel::Static, id_at(8)});
    } else if (key == "cylinder") {
      world.statics.push_back({Cylinder{Vec2(num(1), num(2)), num(3), num(4), num(5)}, PointLabel::Static, id_at(6)});
    } else if (key == "parked") {
      LowDynamicObject o;
      o.id = id_at(1);
      o.size = Vec3(num(2), num(3), num(4));
      o.clearance = num(5);
      parked[o.id] = world.low_dynamic.size();
      world.low_dynamic.push_back(o);
    } else if (key == "place") {
      const auto it = parked.find(id_at(1));
      if (it == parked.end()) throw Error(ErrorCode::ParseError, "line " + std::to_string(line_no) + ": unknown parked id");
      auto& o = world.low_dynamic[it->second];
      if (tok.size() > 3 && tok[3] == "absent") {
        o.placements[id_at(2)] = std::nullopt;
      } else {
        o.placements[id_at(2)] = Placement{Vec2(num(3), num(4)), num(5) * kDeg};
      }
    } else if (key == "mover") {
      Mover m;
      m.id = id_at(1);
      m.session = id_at(2);
      m.size = Vec3(num(3), num(4), num(5));
      m.clearance = num(6);
      m.start = Vec2(num(7), num(8));
      m.end = Vec2(num(9), num(10));
      m.t0 = num(11);
      m.t1 = num(12);
      world.movers.push_back(m);
    } else {
      throw Error(ErrorCode::ParseError, "line " + std::to_string(line_no) + ": unknown directive '" + key + "'");
    }
  }
  if (!header) throw Error(ErrorCode::ParseError, "empty world file");
  world.validate();
  return world;
}

void write_world(std::ostream& out, const WorldSpec& world) {
  out.precision(17);
  out << "msmap-world 1\n";
  out << "seed " << world.seed << "\n";
  out << "sessions " << world.sessions << "\n";
  for (const auto& p : world.statics) {
    if (const auto* b = std::get_if<Box>(&p.shape)) {
      out << "box " << b->center.x() << ' ' << b->center.y() << ' ' << b->center.z() << ' ' << b->size.x() << ' '
          << b->size.y() << ' ' << b->size.z() << ' ' << b->yaw / kDeg << ' ' << p.object_id << "\n";
    } else if (const auto* c = std::get_if<Cylinder>(&p.shape)) {
      out << "cylinder " << c->center.x() << ' ' << c->center.y() << ' ' << c->radius << ' ' << c->zmin << ' '
          << c->zmax << ' ' << p.object_id << "\n";
    } else if (const auto* pl = std::get_if<Plane>(&p.shape)) {
      out << "plane " << pl->point.x() << ' ' << pl->point.y() << ' ' << pl->point.z() << ' ' << pl->normal.x()
          << ' ' << pl->normal.y() << ' ' << pl->normal.z() << ' ' << p.object_id << "\n";
    }
  }
  for (const auto& o : world.low_dynamic) {
    out << "parked " << o.id << ' ' << o.size.x() << ' ' << o.size.y() << ' ' << o.size.z() << ' ' << o.clearance << "\n";
    for (const auto& [session, place] : o.placements) {
      out << "place " << o.id << ' ' << session << ' ';
      if (place) {
        out << place->position.x() << ' ' << place->position.y() << ' ' << place->yaw / kDeg << "\n";
      } else {
        out << "absent\n";
      }
    }
  }
  for (const auto& m : world.movers) {
    out << "mover " << m.id << ' ' << m.session << ' ' << m.size.x() << ' ' << m.size.y() << ' ' << m.size.z() << ' '
        << m.clearance << ' ' << m.start.x() << ' ' << m.start.y() << ' ' << m.end.x() << ' ' << m.end.y() << ' '
        << m.t0 << ' ' << m.t1 << "\n";
  }
}

TrajectorySpec parse_trajectory(std::istream& in) {
  TrajectorySpec t;
  std::string line;
  int line_no = 0;
  bool header = false;
  while (std::getline(in, line)) {
    ++line_no;
    const auto tok = tokens_of(line);
    if (tok.empty()) continue;
    const auto num = [&](std::size_t i) { return number(tok, i, line_no); };
    const std::string& key = tok[0];
    if (!header) {
      if (key != "msmap-trajectory") {
        throw Error(ErrorCode::ParseError, "line " + std::to_string(line_no) + ": missing 'msmap-trajectory' header");
      }
      header = true;
      continue;
    }
    if (key == "waypoint") {
      t.waypoints.emplace_back(num(1), num(2));
    } else if (key == "speed") {
      t.speed = num(1);
    } else if (key == "scan_rate") {
      t.scan_rate = num(1);
    } else if (key == "corner_radius") {
      t.corner_radius = num(1);
    } else if (key == "lateral_offset") {
      t.lateral_offset = num(1);
    } else if (key == "start_offset") {
      t.start_offset = num(1);
    } else if (key == "sensor") {
      for (std::size_t i = 1; i + 1 < tok.size(); i += 2) {
        const std::string& f = tok[i];
        const double v = num(i + 1);
        if (f == "rings") t.sensor.rings = static_cast<std::uint32_t>(v);
        else if (f == "min_elevation") t.sensor.min_elevation_deg = v;
        else if (f == "max_elevation") t.sensor.max_elevation_deg = v;
        else if (f == "azimuth_resolution") t.sensor.azimuth_resolution_deg = v;
        else if (f == "min_range") t.sensor.min_range = v;
        else if (f == "max_range") t.sensor.max_range = v;
        else if (f == "noise") t.sensor.range_noise = v;
        else if (f == "mount_height") t.sensor.mount_height = v;
        else throw Error(ErrorCode::ParseError, "line " + std::to_string(line_no) + ": unknown sensor field '" + f + "'");
      }
    } else {
      throw Error(ErrorCode::ParseError, "line " + std::to_string(line_no) + ": unknown directive '" + key + "'");
    }
  }
  if (!header) throw Error(ErrorCode::ParseError, "empty trajectory file");
  t.validate();
  return t;
}

void write_trajectory(std::ostream& out, const TrajectorySpec& t) {
  out.precision(17);
  out << "msmap-trajectory 1\n";
  out << "speed " << t.speed << "\nscan_rate " << t.scan_rate << "\ncorner_radius " << t.corner_radius
      << "\nlateral_offset " << t.lateral_offset << "\nstart_offset " << t.start_offset << "\n";
  const auto& s = t.sensor;
  out << "sensor rings " << s.rings << " min_elevation " << s.min_elevation_deg << " max_elevation "
      << s.max_elevation_deg << " azimuth_resolution " << s.azimuth_resolution_deg << " min_range " << s.min_range
      << " max_range " << s.max_range << " noise " << s.range_noise << " mount_height " << s.mount_height << "\n";
  for (const auto& w : t.waypoints) out << "waypoint " << w.x() << ' ' << w.y() << "\n";
}

// ---- procedural scene -------------------------------------------------------

namespace {

class SceneBuilder {
 public:
  SceneBuilder(const TrajectorySpec& route, const CampusOptions& opt)
      : path_(build_path(route.waypoints, route.corner_radius)), opt_(opt), rng_(splitmix(opt.seed)) {
    for (double s = 0.0; s <= path_.length; s += 1.0) samples_.push_back(path_.at(s).first);
  }

  double uniform(double a, double b) { return std::uniform_real_distribution<double>(a, b)(rng_); }
  double length() const { return path_.length; }
  std::pair<Vec2, Vec2> at(double s) const { return path_.at(s); }

  double path_distance(const Vec2& p) const {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& q : samples_) best = std::min(best, (p - q).squaredNorm());
    return std::sqrt(best);
  }

  /// Footprint rectangle (center, length along yaw, width) clear of the path
  /// by `clearance` and of every placed footprint.
  bool fits(const Vec2& center, double length, double width, double yaw, double clearance) const {
    const Vec2 ax(std::cos(yaw), std::sin(yaw)), ay = left_normal(ax);
    for (int i = -2; i <= 2; ++i) {
      for (int j = -2; j <= 2; ++j) {
        const Vec2 p = center + ax * (length * 0.25 * i) + ay * (width * 0.25 * j);
        if (path_distance(p) < clearance) return false;
      }
    }
    const double r = 0.5 * std::hypot(length, width);
    for (const auto& [c, rr] : occupied_) {
      if ((c - center).norm() < r + rr + 0.5) return false;
    }
    return true;
  }
  void occupy(const Vec2& c, double length, double width) { occupied_.emplace_back(c, 0.5 * std::hypot(length, width)); }

 private:
  Path path_;
  CampusOptions opt_;
  std::mt19937_64 rng_;
  std::vector<Vec2> samples_;
  std::vector<std::pair<Vec2, double>> occupied_;
};

}  // namespace

WorldSpec generate_campus(const TrajectorySpec& route, const CampusOptions& opt) {
  WorldSpec world;
  world.seed = opt.seed;
  world.sessions = opt.sessions;
  world.statics.push_back({Plane{Vec3::Zero(), Vec3::UnitZ()}, PointLabel::Static, 0});
  SceneBuilder b(route, opt);
  std::uint32_t next_id = 1;
  const Vec3 car(4.5, 1.8, 1.4);

  // relocated parked-car clusters first so nothing else claims their space
  for (int c = 0; c < opt.relocated_clusters; ++c) {
    const double s0 = b.length() * (double(c) + 0.5) / double(opt.relocated_clusters);
    const double side = c % 2 == 0 ? 1.0 : -1.0;
    for (int k = 0; k < opt.cars_per_cluster; ++k) {
      const double s = s0 + 6.0 * double(k);
      const auto [p, h] = b.at(s);
      const auto [p2, h2] = b.at(s + 7.0);
      const double offset = 3.7;
      const Vec2 first = p + side * offset * left_normal(h);
      const Vec2 moved = p2 + side * (offset + 0.6) * left_normal(h2);
      LowDynamicObject o;
      o.id = next_id++;
      o.size = car;
      o.placements[1] = Placement{first, std::atan2(h.y(), h.x())};
      for (std::uint32_t sess = 2; sess <= opt.sessions; ++sess) {
        if ((k + int(sess)) % 3 == 0) {
          o.placements[sess] = std::nullopt;
        } else {
          o.placements[sess] = Placement{moved, std::atan2(h2.y(), h2.x())};
        }
      }
      b.occupy(first, car.x(), car.y());
      b.occupy(moved, car.x(), car.y());
      world.low_dynamic.push_back(o);
    }
  }

  auto add_box = [&](const Vec2& c, double len, double wid, double height, double z0, double yaw) {
    world.statics.push_back({Box{Vec3(c.x(), c.y(), z0 + 0.5 * height), Vec3(len, wid, height), yaw}, PointLabel::Static,
                             next_id++});
    b.occupy(c, len, wid);
  };

  for (double side : {1.0, -1.0}) {
    // buildings
    for (double s = b.uniform(0.0, 10.0); s < b.length(); s += b.uniform(14.0, 28.0)) {
      const auto [p, h] = b.at(s);
      const double len = b.uniform(8.0, 20.0), depth = b.uniform(6.0, 14.0), height = b.uniform(4.0, 14.0);
      const double setback = b.uniform(7.0, 14.0);
      const double yaw = std::atan2(h.y(), h.x()) + b.uniform(-0.15, 0.15);
      const Vec2 c = p + side * (setback + 0.5 * depth) * left_normal(h);
      if (b.fits(c, len, depth, yaw, opt.road_clearance + 2.0)) add_box(c, len, depth, height, 0.0, yaw);
    }
    // trees: trunk plus canopy cylinder starting above 2 m
    for (double s = b.uniform(0.0, 8.0); s < b.length(); s += b.uniform(8.0, 15.0)) {
      const auto [p, h] = b.at(s);
      const double offset = b.uniform(4.6, 6.5);
      const Vec2 c = p + side * offset * left_normal(h);
      const double trunk = b.uniform(0.15, 0.3);
      if (!b.fits(c, 2.0 * trunk + 0.4, 2.0 * trunk + 0.4, 0.0, opt.road_clearance)) continue;
      const double canopy_bottom = b.uniform(2.5, 3.5), canopy_top = b.uniform(5.0, 8.0);
      const double canopy_r = std::min(b.uniform(1.0, 2.0), offset - 2.8);
      world.statics.push_back({Cylinder{c, trunk, 0.0, canopy_bottom}, PointLabel::Static, next_id});
      world.statics.push_back({Cylinder{c, canopy_r, canopy_bottom, canopy_top}, PointLabel::Static, next_id++});
      b.occupy(c, 2.0 * trunk + 0.4, 2.0 * trunk + 0.4);
    }
    // poles
    for (double s = b.uniform(0.0, 20.0); s < b.length(); s += b.uniform(20.0, 40.0)) {
      const auto [p, h] = b.at(s);
      const Vec2 c = p + side * b.uniform(4.2, 5.0) * left_normal(h);
      if (!b.fits(c, 0.4, 0.4, 0.0, opt.road_clearance)) continue;
      world.statics.push_back({Cylinder{c, 0.1, 0.0, b.uniform(4.0, 7.0)}, PointLabel::Static, next_id++});
      b.occupy(c, 0.4, 0.4);
    }
    // hedges and low walls
    for (double s = b.uniform(0.0, 15.0); s < b.length(); s += b.uniform(15.0, 35.0)) {
      const auto [p, h] = b.at(s);
      const double len = b.uniform(4.0, 10.0);
      const double yaw = std::atan2(h.y(), h.x());
      const Vec2 c = p + side * b.uniform(5.0, 6.5) * left_normal(h);
      if (b.fits(c, len, 0.6, yaw, opt.road_clearance)) add_box(c, len, 0.6, b.uniform(0.8, 1.3), 0.0, yaw);
    }
    // static parked cars
    for (double s = b.uniform(0.0, 30.0); s < b.length(); s += b.uniform(25.0, 60.0)) {
      const auto [p, h] = b.at(s);
      const double yaw = std::atan2(h.y(), h.x());
      const Vec2 c = p + side * b.uniform(3.8, 4.6) * left_normal(h);
      if (b.fits(c, car.x(), car.y(), yaw, 2.6)) add_box(c, car.x(), car.y(), car.z(), 0.3, yaw);
    }
  }

  // movers crossing ahead of the vehicle
  const double speed = route.speed;
  for (std::uint32_t sess = 1; sess <= opt.sessions; ++sess) {
    for (int m = 0; m < opt.movers_per_session; ++m) {
      const double s = b.length() * (double(m) + 0.3) / double(opt.movers_per_session);
      const auto [p, h] = b.at(s);
      Mover mv;
      mv.id = next_id++;
      mv.session = sess;
      mv.size = car;
      mv.start = p - 12.0 * left_normal(h);
      mv.end = p + 12.0 * left_normal(h);
      mv.t0 = std::max(0.0, (s - 25.0) / speed);
      mv.t1 = std::max(mv.t0 + 1.0, (s - 10.0) / speed);
      world.movers.push_back(mv);
    }
  }
  return world;
}

}  // namespace msmap::sim
