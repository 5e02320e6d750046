#include "msmap/submap.hpp"

#include "msmap/error.hpp"

namespace msmap {

void Submap::check_invariants() const {
  cloud.check_invariants();
  if (dynamic_probability.size() != cloud.size()) {
    throw Error(ErrorCode::InvalidConfig, "dynamic probability length mismatch in submap " + to_string(id));
  }
  for (float p : dynamic_probability) {
    if (!(p >= 0.0f && p <= 1.0f)) throw Error(ErrorCode::InvalidConfig, "dynamic probability outside [0,1]");
  }
  if (scan_poses.size() != scan_origins.size()) throw Error(ErrorCode::InvalidConfig, "scan pose/origin mismatch");
  if (cloud.has_origins()) {
    for (auto oi : cloud.origin_index) {
      if (oi >= scan_origins.size()) throw Error(ErrorCode::MissingOrigins, "origin index out of range");
    }
  }
}

PointCloud Submap::live_cloud() const { return select(cloud, live_ids(cloud)); }

bool operator==(const Submap& a, const Submap& b) {
  if (a.id != b.id || a.scan_count != b.scan_count || !(a.cloud == b.cloud)) return false;
  if (a.origin.translation() != b.origin.translation() || a.origin.rotation().coeffs() != b.origin.rotation().coeffs()) {
    return false;
  }
  if (a.scan_origins != b.scan_origins || a.dynamic_probability != b.dynamic_probability) return false;
  if (a.scan_poses.size() != b.scan_poses.size()) return false;
  for (std::size_t i = 0; i < a.scan_poses.size(); ++i) {
    const auto& pa = a.scan_poses[i];
    const auto& pb = b.scan_poses[i];
    if (pa.scan_id != pb.scan_id || pa.pose.translation() != pb.pose.translation() ||
        pa.pose.rotation().coeffs() != pb.pose.rotation().coeffs()) {
      return false;
    }
  }
  return true;
}

const Submap* SessionGraph::find(const SubmapId& id) const {
  if (id.session != session || id.index >= submaps.size()) return nullptr;
  return &submaps[id.index];
}

PoseGraph SessionGraph::pose_graph() const {
  PoseGraph g;
  for (const auto& s : submaps) g.vertices.emplace(s.id, s.origin);
  g.edges = odometry_edges;
  g.edges.insert(g.edges.end(), loop_edges.begin(), loop_edges.end());
  if (!submaps.empty()) g.fixed.insert(submaps.front().id);
  return g;
}

void SessionGraph::apply(const PoseGraph& graph) {
  for (auto& s : submaps) {
    if (auto it = graph.vertices.find(s.id); it != graph.vertices.end()) s.origin = it->second;
  }
}

}  // namespace msmap
