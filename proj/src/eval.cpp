#include "msmap/eval.hpp"

#include <Eigen/Geometry>
#include <algorithm>
#include <cmath>
#include <cstdio>

#include "msmap/error.hpp"

namespace msmap {

namespace {

TrajectoryError summarize(std::span<const ScanPose> estimate, std::span<const Pose> truth, const Pose& align) {
  TrajectoryError out;
  out.alignment = align;
  double sq = 0.0, sum = 0.0;
  for (const auto& sp : estimate) {
    const double e = (align.apply(sp.pose.translation()) - truth[sp.scan_id].translation()).norm();
    sq += e * e;
    sum += e;
    out.max = std::max(out.max, e);
  }
  out.count = estimate.size();
  if (out.count > 0) {
    out.rms = std::sqrt(sq / double(out.count));
    out.mean = sum / double(out.count);
  }
  return out;
}

void check_ids(std::span<const ScanPose> estimate, std::span<const Pose> truth) {
  for (const auto& sp : estimate) {
    if (sp.scan_id >= truth.size()) {
      throw Error(ErrorCode::InvalidConfig, "no ground truth for scan " + std::to_string(sp.scan_id));
    }
  }
}

}  // namespace

TrajectoryError absolute_trajectory_error(std::span<const ScanPose> estimate, std::span<const Pose> truth) {
  check_ids(estimate, truth);
  if (estimate.size() < 3) throw Error(ErrorCode::InvalidConfig, "trajectory error needs at least 3 poses");
  Eigen::Matrix3Xd a(3, estimate.size()), b(3, estimate.size());
  for (std::size_t i = 0; i < estimate.size(); ++i) {
    a.col(long(i)) = estimate[i].pose.translation();
    b.col(long(i)) = truth[estimate[i].scan_id].translation();
  }
  const Eigen::Matrix4d t = Eigen::umeyama(a, b, false);
  const Pose align(Quat(Mat3(t.block<3, 3>(0, 0))), t.block<3, 1>(0, 3));
  return summarize(estimate, truth, align);
}

TrajectoryError trajectory_error_in_frame(std::span<const ScanPose> estimate, std::span<const Pose> truth) {
  check_ids(estimate, truth);
  return summarize(estimate, truth, Pose::identity());
}

std::vector<Vec3> true_scan_positions(const Submap& submap, std::span<const Pose> truth) {
  std::vector<Vec3> out;
  for (const auto& sp : submap.own_scan_poses()) {
    if (sp.scan_id >= truth.size()) throw Error(ErrorCode::InvalidConfig, "no ground truth for scan " + std::to_string(sp.scan_id));
    out.push_back(truth[sp.scan_id].translation());
  }
  return out;
}

VerdictTable score_verdicts(std::span<const Verdict> verdicts, const std::map<SubmapId, const Submap*>& submaps,
                            const std::map<std::uint32_t, std::vector<Pose>>& truth, double radius) {
  auto positions = [&](const SubmapId& id) {
    const auto s = submaps.find(id);
    const auto t = truth.find(id.session);
    if (s == submaps.end() || t == truth.end()) throw Error(ErrorCode::InvalidConfig, "no submap or truth for " + to_string(id));
    return true_scan_positions(*s->second, t->second);
  };
  VerdictTable out;
  for (const auto& v : verdicts) {
    ++out.total;
    if (v.kind == VerdictKind::Undefined) {
      ++out.undefined;
      continue;
    }
    const auto mine = positions(v.submap);
    bool ok = !v.matched.empty();
    for (const auto& h : v.matched) {
      const auto theirs = positions(h);
      bool near = false;
      for (const auto& a : mine) {
        for (const auto& b : theirs) near = near || (a - b).norm() < radius;
      }
      ok = ok && near;
    }
    ++(ok ? out.correct : out.wrong);
  }
  return out;
}

double DynamicScore::precision() const {
  const std::size_t labeled = true_positives + low_false_positives + high_removals;
  return labeled ? double(true_positives) / double(labeled) : 1.0;
}

std::optional<sim::Box> placed_object(const sim::LowDynamicObject& o, std::uint32_t session) {
  const auto it = o.placements.find(session);
  if (it == o.placements.end() || !it->second) return std::nullopt;
  const auto& p = *it->second;
  return sim::Box{Vec3(p.position.x(), p.position.y(), o.clearance + 0.5 * o.size.z()), o.size, p.yaw};
}

namespace {

bool in_box(const sim::Box& b, const Vec3& p, double margin) {
  const Vec3 d = Pose::from_yaw(b.yaw, b.center).inverse().apply(p);
  return std::abs(d.x()) <= b.size.x() / 2 + margin && std::abs(d.y()) <= b.size.y() / 2 + margin &&
         std::abs(d.z()) <= b.size.z() / 2 + margin;
}

bool same_placement(const std::optional<sim::Box>& a, const std::optional<sim::Box>& b) {
  if (!a || !b) return !a && !b;
  return a->center == b->center && a->yaw == b->yaw;
}

}  // namespace

DynamicScore score_dynamics(const Submap& history, std::span<const std::uint32_t> dynamic, const Pose& to_world,
                            const sim::WorldSpec& world, std::uint32_t history_session, std::uint32_t current_session,
                            double height_limit, double margin) {
  std::vector<sim::Box> gone;
  for (const auto& o : world.low_dynamic) {
    const auto then = placed_object(o, history_session);
    if (then && !same_placement(then, placed_object(o, current_session))) gone.push_back(*then);
  }
  std::vector<std::uint8_t> labeled(history.cloud.size(), 0);
  for (auto id : dynamic) {
    if (id >= labeled.size()) throw Error(ErrorCode::InvalidConfig, "dynamic id out of range");
    labeled[id] = 1;
  }
  DynamicScore out;
  for (std::uint32_t id = 0; id < history.cloud.size(); ++id) {
    // points already removed by an earlier pair are scored there
    if (!history.cloud.live[id]) continue;
    const Vec3 p = to_world.apply(Vec3(history.cloud.points[id].cast<double>()));
    const bool positive = std::any_of(gone.begin(), gone.end(), [&](const sim::Box& b) { return in_box(b, p, margin); });
    if (p.z() > height_limit) {
      out.high_removals += labeled[id];
      continue;
    }
    if (positive) {
      ++out.positives;
      out.true_positives += labeled[id];
    } else {
      ++out.low_static;
      out.low_false_positives += labeled[id];
    }
  }
  return out;
}

void accumulate(DynamicScore& into, const DynamicScore& part) {
  into.positives += part.positives;
  into.true_positives += part.true_positives;
  into.low_static += part.low_static;
  into.low_false_positives += part.low_false_positives;
  into.high_removals += part.high_removals;
}

std::string format_key_values(const Report& report) {
  std::string out;
  for (const auto& [k, v] : report) out += k + ' ' + v + '\n';
  return out;
}

std::string format_verdict_table(const VerdictTable& t) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-8s %-20s %-10s %-16s\n%-8zu %-20zu %-10zu %-16zu\n", "total", "correctly matched",
                "undefined", "wrongly matched", t.total, t.correct, t.undefined, t.wrong);
  return buf;
}

}  // namespace msmap
