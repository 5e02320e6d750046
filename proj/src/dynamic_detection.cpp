#include "msmap/dynamic_detection.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <deque>
#include <limits>
#include <map>
#include <ostream>
#include <set>

#include "msmap/error.hpp"

namespace msmap {

void DynamicConfig::validate() const {
  if (!(d_beta > 0.0) || !(grow_distance > 0.0) || !(grow_support > 0.0)) {
    throw Error(ErrorCode::InvalidConfig, "d_beta, grow distance and grow support must be positive");
  }
  if (!(grow_normal_angle > 0.0 && grow_normal_angle <= std::numbers::pi / 2)) {
    throw Error(ErrorCode::InvalidConfig, "grow normal angle must lie in (0, pi/2]");
  }
  if (!(voxel > 0.0)) throw Error(ErrorCode::InvalidConfig, "voxel must be positive");
  if (!(end_margin >= 0.0)) throw Error(ErrorCode::InvalidConfig, "end margin must be >= 0");
  if (normal_k < 3) throw Error(ErrorCode::InvalidConfig, "normal k must be >= 3");
}

namespace {

// Normals of the live points, computed when the cloud carries none.
std::vector<Vec3f> live_normals(const Submap& s, std::size_t k) {
  const PointCloud& c = s.cloud;
  if (c.has_normals()) return c.normals;
  std::vector<Vec3f> out(c.size(), Vec3f::Zero());
  const auto ids = live_ids(c);
  if (ids.size() < k) return out;
  PointCloud live = select(c, ids);
  live = estimate_normals(live, k, s.scan_origins);
  for (std::size_t i = 0; i < ids.size(); ++i) out[ids[i]] = live.normals[i];
  return out;
}

bool normals_agree(const Vec3f& a, const Vec3f& b, double cos_limit) {
  if (a.isZero() || b.isZero()) return false;
  return std::abs(double(a.dot(b))) >= cos_limit;
}

std::vector<Vec3f> points_of(const PointCloud& c, std::span<const std::uint32_t> ids, const Pose* pose = nullptr) {
  std::vector<Vec3f> out;
  out.reserve(ids.size());
  for (auto id : ids) out.push_back(pose ? pose->apply(c.points[id]) : c.points[id]);
  return out;
}

// Breadth-first growth over `ids` (indices into `pts`) from `marked`.
// `accept(i)` gates every candidate besides the normal test.
template <typename Accept>
void grow(std::vector<std::uint8_t>& marked, const std::vector<Vec3f>& pts, const std::vector<Vec3f>& normals,
          const SpatialIndex& index, double distance, double cos_limit, Accept&& accept) {
  std::deque<std::uint32_t> queue;
  for (std::uint32_t i = 0; i < marked.size(); ++i) {
    if (marked[i]) queue.push_back(i);
  }
  while (!queue.empty()) {
    const std::uint32_t i = queue.front();
    queue.pop_front();
    for (auto j : index.radius_query(pts[i], distance)) {
      if (marked[j] || !normals_agree(normals[i], normals[j], cos_limit) || !accept(j)) continue;
      marked[j] = 1;
      queue.push_back(j);
    }
  }
}

}  // namespace

PartitionResult partition(const Submap& current, const Submap& history, const Pose& align, const DynamicConfig& cfg) {
  cfg.validate();
  const auto cur_ids = live_ids(current.cloud);
  const auto his_ids = live_ids(history.cloud);
  if (cur_ids.empty() || his_ids.empty()) throw Error(ErrorCode::EmptyCloud, "partition needs live points in both submaps");

  // everything in the current frame
  const auto cur_pts = points_of(current.cloud, cur_ids);
  const auto his_pts = points_of(history.cloud, his_ids, &align);
  const auto cur_all_n = live_normals(current, cfg.normal_k);
  const auto his_all_n = live_normals(history, cfg.normal_k);
  std::vector<Vec3f> cur_n, his_n;
  for (auto id : cur_ids) cur_n.push_back(cur_all_n[id]);
  const Quat rot = align.rotation();
  for (auto id : his_ids) his_n.push_back((rot * his_all_n[id].cast<double>()).cast<float>());

  const SpatialIndex cur_index(cur_pts), his_index(his_pts);
  PartitionResult out;
  std::vector<std::uint8_t> cur_mark(cur_pts.size(), 0), his_mark(his_pts.size(), 0);
  for (std::uint32_t h = 0; h < his_pts.size(); ++h) {
    const Neighbor c = cur_index.nearest(his_pts[h], cfg.d_beta);
    if (c.id == std::numeric_limits<std::uint32_t>::max()) continue;
    if (his_index.nearest(cur_pts[c.id]).id != h) continue;
    cur_mark[c.id] = 1;
    his_mark[h] = 1;
    out.seeds.emplace_back(cur_ids[c.id], his_ids[h]);
  }
  std::sort(out.seeds.begin(), out.seeds.end());

  const double cos_limit = std::cos(cfg.grow_normal_angle);
  grow(cur_mark, cur_pts, cur_n, cur_index, cfg.grow_distance, cos_limit, [&](std::uint32_t j) {
    return his_index.nearest(cur_pts[j], cfg.grow_support).id != std::numeric_limits<std::uint32_t>::max();
  });
  grow(his_mark, his_pts, his_n, his_index, cfg.grow_distance, cos_limit, [&](std::uint32_t j) {
    return cur_index.nearest(his_pts[j], cfg.grow_support).id != std::numeric_limits<std::uint32_t>::max();
  });

  for (std::size_t i = 0; i < cur_ids.size(); ++i) {
    (cur_mark[i] ? out.common_current : out.complement_current).push_back(cur_ids[i]);
  }
  for (std::size_t i = 0; i < his_ids.size(); ++i) {
    (his_mark[i] ? out.common_history : out.complement_history).push_back(his_ids[i]);
  }
  return out;
}

void traverse_voxels(const Vec3& a, const Vec3& b, double voxel, const std::function<bool(const VoxelKey&)>& visit) {
  VoxelKey cur = voxel_of(a, voxel);
  const VoxelKey last = voxel_of(b, voxel);
  const Vec3 d = b - a;
  std::int32_t* c[3] = {&cur.x, &cur.y, &cur.z};
  const std::int32_t end[3] = {last.x, last.y, last.z};
  int step[3];
  std::int64_t remaining[3];
  for (int i = 0; i < 3; ++i) {
    step[i] = end[i] > *c[i] ? 1 : (end[i] < *c[i] ? -1 : 0);
    remaining[i] = std::abs(std::int64_t(end[i]) - *c[i]);
  }
  // parameter at which the segment leaves the current cell along axis i
  auto exit_t = [&](int i) {
    if (remaining[i] == 0) return std::numeric_limits<double>::infinity();
    const double boundary = (double(*c[i]) + (step[i] > 0 ? 1.0 : 0.0)) * voxel;
    return (boundary - a[i]) / d[i];
  };
  if (!visit(cur)) return;
  while (remaining[0] + remaining[1] + remaining[2] > 0) {
    int axis = 0;
    double best = exit_t(0);
    for (int i = 1; i < 3; ++i) {
      const double t = exit_t(i);
      if (t < best) {
        best = t;
        axis = i;
      }
    }
    *c[axis] += step[axis];
    --remaining[axis];
    if (!visit(cur)) return;
  }
}

std::vector<VoxelKey> traverse_voxels(const Vec3& a, const Vec3& b, double voxel) {
  std::vector<VoxelKey> out;
  traverse_voxels(a, b, voxel, [&](const VoxelKey& k) {
    out.push_back(k);
    return true;
  });
  return out;
}

std::vector<VoxelKey> VoxelMap::sorted_keys() const {
  std::vector<VoxelKey> keys;
  keys.reserve(cells.size());
  for (const auto& [k, ids] : cells) keys.push_back(k);
  std::sort(keys.begin(), keys.end());
  return keys;
}

VoxelMap build_voxel_map(const PointCloud& cloud, std::span<const std::uint32_t> ids, double voxel) {
  if (!(voxel > 0.0)) throw Error(ErrorCode::InvalidConfig, "voxel must be positive");
  VoxelMap m;
  m.voxel = voxel;
  for (auto id : ids) m.cells[voxel_of(cloud.points[id], voxel)].push_back(id);
  for (auto& [k, v] : m.cells) std::sort(v.begin(), v.end());
  return m;
}

namespace {

void require_origins(const PointCloud& cloud, std::span<const std::uint32_t> ids, std::span<const Vec3f> origins) {
  if (ids.empty()) return;
  if (!cloud.has_origins()) throw Error(ErrorCode::MissingOrigins, "cloud carries no sensor origins");
  for (auto id : ids) {
    if (cloud.origin_index[id] >= origins.size()) {
      throw Error(ErrorCode::MissingOrigins, "point " + std::to_string(id) + " has no sensor origin");
    }
  }
}

Vec3 center_of(const VoxelKey& k, double voxel) {
  return Vec3((k.x + 0.5) * voxel, (k.y + 0.5) * voxel, (k.z + 0.5) * voxel);
}

// Ray from `from` toward `to`, shortened by `margin` at the far end.
bool shortened(const Vec3& from, const Vec3& to, double margin, Vec3& end) {
  const double len = (to - from).norm();
  if (!(len > margin)) return false;
  end = from + (to - from) * ((len - margin) / len);
  return true;
}

struct RaySet {
  std::vector<Vec3> from;  // sensor origin
  std::vector<Vec3> to;    // front voxel center
  std::vector<VoxelKey> key;
};

// One ray per (front voxel, observing origin) of `front`, mapped by `pose`.
RaySet front_rays(const VoxelMap& front, const PointCloud& cloud, std::span<const Vec3f> origins, const Pose& pose) {
  RaySet r;
  for (const auto& k : front.sorted_keys()) {
    std::set<std::uint16_t> seen;
    for (auto id : front.rays.at(k)) {
      const auto oi = cloud.origin_index[id];
      if (!seen.insert(oi).second) continue;
      r.from.push_back(pose.apply(Vec3(origins[oi].cast<double>())));
      r.to.push_back(pose.apply(center_of(k, front.voxel)));
      r.key.push_back(k);
    }
  }
  return r;
}

}  // namespace

VoxelMap front_voxels(const PointCloud& cloud, std::span<const std::uint32_t> ids, std::span<const Vec3f> origins,
                      double voxel) {
  require_origins(cloud, ids, origins);
  const VoxelMap all = build_voxel_map(cloud, ids, voxel);
  VoxelMap out;
  out.voxel = voxel;
  for (auto id : ids) {
    const Vec3 o = origins[cloud.origin_index[id]].cast<double>();
    const Vec3 p = cloud.points[id].cast<double>();
    traverse_voxels(o, p, voxel, [&](const VoxelKey& k) {
      const auto it = all.cells.find(k);
      if (it == all.cells.end()) return true;
      out.cells.emplace(k, it->second);
      out.rays[k].push_back(id);
      return false;
    });
  }
  return out;
}

DynamicLabels detect_dynamics(const PartitionResult& part, const Submap& current, const Submap& history,
                              const Pose& align, const DynamicConfig& cfg) {
  cfg.validate();
  const VoxelMap fc = front_voxels(current.cloud, part.complement_current, current.scan_origins, cfg.voxel);
  const VoxelMap fh = front_voxels(history.cloud, part.complement_history, history.scan_origins, cfg.voxel);
  const Pose to_history = align.inverse();
  auto exempt = [&](const PointCloud& c, std::uint32_t id) {
    return double(c.points[id].z()) + cfg.sensor_height > cfg.height_limit;
  };

  // current free space against history front voxels, in the history grid
  const RaySet rays = front_rays(fc, current.cloud, current.scan_origins, to_history);
  std::set<std::uint32_t> coarse;
  for (std::size_t r = 0; r < rays.from.size(); ++r) {
    Vec3 end;
    if (!shortened(rays.from[r], rays.to[r], cfg.end_margin, end)) continue;
    traverse_voxels(rays.from[r], end, cfg.voxel, [&](const VoxelKey& k) {
      if (const auto it = fh.cells.find(k); it != fh.cells.end()) {
        for (auto id : it->second) {
          if (!exempt(history.cloud, id)) coarse.insert(id);
        }
      }
      return true;
    });
  }

  DynamicLabels out;
  out.coarse.assign(coarse.begin(), coarse.end());

  // grow over the history complement below the height limit
  const auto& comp = part.complement_history;
  if (!coarse.empty()) {
    std::vector<Vec3f> pts;
    for (auto id : comp) pts.push_back(history.cloud.points[id]);
    const auto all_n = live_normals(history, cfg.normal_k);
    std::vector<Vec3f> normals;
    for (auto id : comp) normals.push_back(all_n[id]);
    std::vector<std::uint8_t> marked(comp.size(), 0);
    for (std::size_t i = 0; i < comp.size(); ++i) marked[i] = coarse.contains(comp[i]);
    const SpatialIndex index(pts);
    grow(marked, pts, normals, index, cfg.grow_distance, std::cos(cfg.grow_normal_angle),
         [&](std::uint32_t j) { return !exempt(history.cloud, comp[j]); });
    for (std::size_t i = 0; i < comp.size(); ++i) {
      if (marked[i]) out.dynamic.push_back(comp[i]);
    }
  }

  // mend: current front points whose rays pass within one voxel of a
  // removed point
  if (!out.dynamic.empty()) {
    VoxelSet removed;
    for (auto id : out.dynamic) {
      const VoxelKey k = voxel_of(history.cloud.points[id], cfg.voxel);
      for (int dx = -1; dx <= 1; ++dx) {
        for (int dy = -1; dy <= 1; ++dy) {
          for (int dz = -1; dz <= 1; ++dz) removed.insert({k.x + dx, k.y + dy, k.z + dz});
        }
      }
    }
    std::set<std::uint32_t> mend;
    for (std::size_t r = 0; r < rays.from.size(); ++r) {
      Vec3 end;
      if (!shortened(rays.from[r], rays.to[r], cfg.end_margin, end)) continue;
      bool hit = false;
      traverse_voxels(rays.from[r], end, cfg.voxel, [&](const VoxelKey& k) {
        hit = removed.contains(k);
        return !hit;
      });
      if (hit) {
        for (auto id : fc.cells.at(rays.key[r])) mend.insert(id);
      }
    }
    out.mend.assign(mend.begin(), mend.end());
  }

  // symmetric pass: history free space against current front voxels
  const RaySet back = front_rays(fh, history.cloud, history.scan_origins, align);
  std::set<std::uint32_t> sym;
  for (std::size_t r = 0; r < back.from.size(); ++r) {
    Vec3 end;
    if (!shortened(back.from[r], back.to[r], cfg.end_margin, end)) continue;
    traverse_voxels(back.from[r], end, cfg.voxel, [&](const VoxelKey& k) {
      if (const auto it = fc.cells.find(k); it != fc.cells.end()) {
        for (auto id : it->second) {
          if (!exempt(current.cloud, id)) sym.insert(id);
        }
      }
      return true;
    });
  }
  out.symmetric.assign(sym.begin(), sym.end());
  return out;
}

Submap update_history_submap(const Submap& history, const DynamicLabels& labels, const Submap& current,
                             const Pose& align) {
  Submap out = history;
  for (auto id : labels.dynamic) {
    if (id >= out.cloud.size()) throw Error(ErrorCode::InvalidConfig, "dynamic id out of range");
    out.cloud.live[id] = 0;
  }
  if (labels.mend.empty()) return out;
  if (!current.cloud.has_origins()) throw Error(ErrorCode::MissingOrigins, "mend points need sensor origins");
  const Pose to_history = align.inverse();
  const bool normals = out.cloud.has_normals() || out.cloud.empty();
  const bool origins = out.cloud.has_origins() || out.cloud.empty();
  std::map<std::uint16_t, std::uint16_t> moved;
  for (auto id : labels.mend) {
    if (id >= current.cloud.size()) throw Error(ErrorCode::InvalidConfig, "mend id out of range");
    const std::uint16_t src = current.cloud.origin_index[id];
    if (src >= current.scan_origins.size()) throw Error(ErrorCode::MissingOrigins, "mend point has no sensor origin");
    auto it = moved.find(src);
    if (it == moved.end()) {
      if (out.scan_origins.size() >= std::numeric_limits<std::uint16_t>::max()) {
        throw Error(ErrorCode::InvalidConfig, "too many sensor origins in submap " + to_string(out.id));
      }
      const auto index = static_cast<std::uint16_t>(out.scan_origins.size());
      const Pose pose = to_history * current.scan_poses[src].pose;
      out.scan_poses.push_back({current.scan_poses[src].scan_id, pose});
      out.scan_origins.push_back(pose.translation().cast<float>());
      it = moved.emplace(src, index).first;
    }
    out.cloud.points.push_back(to_history.apply(current.cloud.points[id]));
    out.cloud.live.push_back(1);
    if (normals) {
      const Vec3f n = current.cloud.has_normals() ? current.cloud.normals[id] : Vec3f::Zero();
      out.cloud.normals.push_back((to_history.rotation() * n.cast<double>()).cast<float>());
    }
    if (origins) out.cloud.origin_index.push_back(it->second);
    out.dynamic_probability.push_back(0.0f);
  }
  return out;
}

void write_labeled_ply(std::ostream& out, const PointCloud& cloud, std::span<const std::uint8_t> labels) {
  static_assert(std::endian::native == std::endian::little, "PLY writer assumes a little-endian host");
  if (labels.size() != cloud.size()) throw Error(ErrorCode::InvalidConfig, "one label per point required");
  out << "ply\nformat binary_little_endian 1.0\nelement vertex " << cloud.size()
      << "\nproperty float x\nproperty float y\nproperty float z\nproperty uchar label\nend_header\n";
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    out.write(reinterpret_cast<const char*>(cloud.points[i].data()), 3 * sizeof(float));
    out.put(static_cast<char>(labels[i]));
  }
}

}  // namespace msmap
