#include "msmap/submap_pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <numbers>
#include <random>

#include "msmap/parallel.hpp"

namespace msmap {

void SlamConfig::validate() const {
  tracking_icp.validate();
  loop.validate();
  if (!(submap_translation > 0.0) || !(submap_rotation > 0.0)) {
    throw Error(ErrorCode::InvalidConfig, "submap thresholds must be positive");
  }
  if (!(map_voxel > 0.0) || !(tracking_source_voxel > 0.0) || !(tracking_target_voxel > 0.0)) {
    throw Error(ErrorCode::InvalidConfig, "voxel sizes must be positive");
  }
  if (!(dynamic_increment > 0.0) || !(dynamic_cut > 0.0 && dynamic_cut <= 1.0)) {
    throw Error(ErrorCode::InvalidConfig, "dynamic increment/cut out of range");
  }
  if (!(free_space_tolerance > 0.0) || !(free_space_angular_tolerance > 0.0) || free_space_margin < 0.0 || free_space_relative_margin < 0.0) {
    throw Error(ErrorCode::InvalidConfig, "free-space parameters out of range");
  }
  if (normal_k < 3 || tracking_normal_k < 3) throw Error(ErrorCode::InvalidConfig, "normal neighborhoods need k >= 3");
  if (!(tracking_max_condition > 1.0)) throw Error(ErrorCode::InvalidConfig, "tracking_max_condition must exceed 1");
  if (tracking_refresh_scans < 1) throw Error(ErrorCode::InvalidConfig, "tracking_refresh_scans must be >= 1");
  if (!(odometry_sigma_translation > 0.0) || !(odometry_sigma_rotation > 0.0)) {
    throw Error(ErrorCode::InvalidConfig, "odometry sigmas must be positive");
  }
}

bool should_finish_submap(const Pose& origin, const Pose& current_pose, double t_thresh, double r_thresh) {
  const PoseDelta d = pose_delta(origin, current_pose);
  return d.translation > t_thresh || d.rotation > r_thresh;
}

namespace {

PointCloud scan_cloud(const Scan& scan) {
  PointCloud c;
  c.points.reserve(scan.points.size());
  for (const auto& p : scan.points) c.push_back(p.cast<float>());
  return c;
}

/// Incremental accumulation into one submap: keeps a voxel occupancy map of
/// live points so appends and free-space updates avoid full rescans.
class SubmapBuilder {
 public:
  SubmapBuilder(Submap& submap, const SlamConfig& cfg) : m_(submap), cfg_(cfg) {
    for (std::uint32_t i = 0; i < m_.cloud.size(); ++i) {
      if (m_.cloud.live[i]) voxels_.emplace(voxel_of(m_.cloud.points[i], cfg_.map_voxel), i);
    }
  }

  void integrate(const Scan& scan, const Pose& pose) {
    if (scan.points.empty()) return;
    carve(scan, pose);
    append(scan, pose);
  }

 private:
  void carve(const Scan& scan, const Pose& pose) {
    if (m_.cloud.empty()) return;
    constexpr double kCell = 0.5 * std::numbers::pi / 180.0;
    const auto n_az = static_cast<int>(std::ceil(2.0 * std::numbers::pi / kCell));
    const auto n_el = static_cast<int>(std::ceil(std::numbers::pi / kCell)) + 1;

    struct Ray {
      Vec3 dir;
      double range;
    };
    std::vector<Ray> rays;
    std::vector<int> cell_of;
    rays.reserve(scan.points.size());
    for (const auto& q : scan.points) {
      const double r = q.norm();
      if (!(r > 1e-6)) continue;
      const Vec3 d = q / r;
      const int ia = std::clamp(int(std::floor((std::atan2(d.y(), d.x()) + std::numbers::pi) / kCell)), 0, n_az - 1);
      const int ie = std::clamp(int(std::floor((std::asin(std::clamp(d.z(), -1.0, 1.0)) + std::numbers::pi / 2) / kCell)),
                                0, n_el - 1);
      rays.push_back({d, r});
      cell_of.push_back(ie * n_az + ia);
    }
    // compressed rows: rays grouped by cell
    std::vector<std::uint32_t> start(std::size_t(n_az) * n_el + 1, 0);
    for (int c : cell_of) ++start[std::size_t(c) + 1];
    for (std::size_t i = 1; i < start.size(); ++i) start[i] += start[i - 1];
    std::vector<std::uint32_t> order(rays.size());
    {
      std::vector<std::uint32_t> fill(start.begin(), start.end() - 1);
      for (std::uint32_t i = 0; i < rays.size(); ++i) order[fill[std::size_t(cell_of[i])]++] = i;
    }

    const Pose inv = pose.inverse();
    const double tol = cfg_.free_space_tolerance;
    for (std::uint32_t id = 0; id < m_.cloud.size(); ++id) {
      if (!m_.cloud.live[id]) continue;
      const Vec3 q = inv.apply(Vec3(m_.cloud.points[id].cast<double>()));
      const double r = q.norm();
      if (!(r > tol)) continue;
      const double reach = std::min(tol, r * cfg_.free_space_angular_tolerance);
      const double alpha = std::asin(reach / r);
      const double el = std::asin(std::clamp(q.z() / r, -1.0, 1.0));
      const double az = std::atan2(q.y(), q.x());
      const double need = r + std::max(cfg_.free_space_margin, cfg_.free_space_relative_margin * r);
      const int ie0 = int(std::floor((el - alpha + std::numbers::pi / 2) / kCell));
      const int ie1 = int(std::floor((el + alpha + std::numbers::pi / 2) / kCell));
      const double span_az = alpha / std::max(std::cos(std::abs(el) + alpha), 1e-3);
      const int ia0 = int(std::floor((az - span_az + std::numbers::pi) / kCell));
      const int ia1 = std::min(ia0 + n_az - 1, int(std::floor((az + span_az + std::numbers::pi) / kCell)));
      bool hit = false;
      for (int ie = std::max(ie0, 0); ie <= std::min(ie1, n_el - 1) && !hit; ++ie) {
        for (int ia = ia0; ia <= ia1 && !hit; ++ia) {
          const int cell = ie * n_az + ((ia % n_az) + n_az) % n_az;
          for (std::uint32_t k = start[cell]; k < start[std::size_t(cell) + 1]; ++k) {
            const Ray& ray = rays[order[k]];
            if (ray.range <= need) continue;
            const double t = q.dot(ray.dir);
            if (t > 0.0 && (q - t * ray.dir).squaredNorm() <= reach * reach) {
              hit = true;
              break;
            }
          }
        }
      }
      if (!hit) continue;
      float& p = m_.dynamic_probability[id];
      p = std::min(1.0f, p + static_cast<float>(cfg_.dynamic_increment));
      if (p >= static_cast<float>(cfg_.dynamic_cut) - 1e-6f) {
        m_.cloud.live[id] = 0;
        const auto it = voxels_.find(voxel_of(m_.cloud.points[id], cfg_.map_voxel));
        if (it != voxels_.end() && it->second == id) voxels_.erase(it);
      }
    }
  }

  void append(const Scan& scan, const Pose& pose) {
    if (m_.scan_origins.size() >= std::numeric_limits<std::uint16_t>::max()) {
      throw Error(ErrorCode::InvalidConfig, "too many scans in submap " + to_string(m_.id));
    }
    const auto origin = static_cast<std::uint16_t>(m_.scan_origins.size());
    m_.scan_origins.push_back(pose.translation().cast<float>());
    m_.scan_poses.push_back({scan.id, pose});
    ++m_.scan_count;
    const bool normals = m_.cloud.has_normals();
    for (const auto& q : scan.points) {
      const Vec3f p = pose.apply(q).cast<float>();
      const VoxelKey key = voxel_of(p, cfg_.map_voxel);
      if (voxels_.contains(key)) continue;
      const auto id = static_cast<std::uint32_t>(m_.cloud.size());
      voxels_.emplace(key, id);
      m_.cloud.push_back(p);
      m_.cloud.origin_index.push_back(origin);
      if (normals) m_.cloud.normals.push_back(Vec3f::Zero());
      m_.dynamic_probability.push_back(0.0f);
    }
  }

  Submap& m_;
  const SlamConfig& cfg_;
  VoxelHashMap<std::uint32_t> voxels_;
};

/// Downsampled, normal-carrying registration target that grows with every
/// tracked scan and can be re-expressed in a new submap frame.
class Tracker {
 public:
  explicit Tracker(const SlamConfig& cfg) : cfg_(cfg) {}

  bool empty() const { return points_.empty(); }

  void add(const Scan& scan, const Pose& pose) {
    for (const auto& q : scan.points) {
      const Vec3f p = pose.apply(q).cast<float>();
      if (voxels_.emplace(voxel_of(p, cfg_.tracking_target_voxel), std::uint32_t(points_.size())).second) {
        pending_.push_back(std::uint32_t(points_.size()));
        points_.push_back(p);
        normals_.push_back(Vec3f::Zero());
      }
    }
    if (!target_ || ++since_rebuild_ >= cfg_.tracking_refresh_scans) rebuild();
  }

  void add_cloud(const PointCloud& cloud) {
    for (std::uint32_t i = 0; i < cloud.size(); ++i) {
      if (!cloud.live[i]) continue;
      if (voxels_.emplace(voxel_of(cloud.points[i], cfg_.tracking_target_voxel), std::uint32_t(points_.size())).second) {
        pending_.push_back(std::uint32_t(points_.size()));
        points_.push_back(cloud.points[i]);
        normals_.push_back(Vec3f::Zero());
      }
    }
    rebuild();
  }

  /// Re-expresses the target in the frame `new_frame` (given in the current
  /// frame) and drops points beyond the keep radius.
  void rebase(const Pose& new_frame) {
    const Pose inv = new_frame.inverse();
    const Eigen::Matrix3f r = inv.rotation_matrix().cast<float>();
    voxels_.clear();
    // pending points are re-added as fresh so they still get normals
    std::vector<std::uint8_t> was_pending(points_.size(), 0);
    for (auto id : pending_) was_pending[id] = 1;
    pending_.clear();
    std::vector<Vec3f> pts;
    std::vector<Vec3f> nrm;
    for (std::size_t i = 0; i < points_.size(); ++i) {
      const Vec3f p = inv.apply(points_[i]);
      if (p.norm() > cfg_.tracking_keep_radius) continue;
      if (!voxels_.emplace(voxel_of(p, cfg_.tracking_target_voxel), std::uint32_t(pts.size())).second) continue;
      if (was_pending[i]) pending_.push_back(std::uint32_t(pts.size()));
      pts.push_back(p);
      nrm.push_back(r * normals_[i]);
    }
    points_ = std::move(pts);
    normals_ = std::move(nrm);
    rebuild();
  }

  Pose track(const Scan& scan, const Pose& predicted) const {
    if (!target_) return predicted;
    const PointCloud source = voxel_downsample(scan_cloud(scan), cfg_.tracking_source_voxel);
    if (source.empty()) throw Error(ErrorCode::TrackingLost, "scan " + std::to_string(scan.id) + " is empty");
    IcpResult r;
    try {
      r = icp(source, *target_, predicted, cfg_.tracking_icp);
    } catch (const Error& e) {
      throw Error(ErrorCode::TrackingLost, "scan " + std::to_string(scan.id) + ": " + e.what());
    }
    if (r.overlap_ratio < cfg_.tracking_min_overlap) {
      throw Error(ErrorCode::TrackingLost, "scan " + std::to_string(scan.id) + ": overlap " +
                                               std::to_string(r.overlap_ratio) + " below " +
                                               std::to_string(cfg_.tracking_min_overlap));
    }
    return r.transform;
  }

 private:
  void rebuild() {
    since_rebuild_ = 0;
    if (points_.empty()) {
      target_.reset();
      return;
    }
    const std::vector<std::uint32_t> fresh = std::move(pending_);
    pending_.clear();
    PointCloud cloud;
    cloud.points = points_;
    cloud.live.assign(points_.size(), 1);
    cloud.normals = normals_;
    SpatialIndex index(cloud);
    if (!fresh.empty() && points_.size() >= cfg_.tracking_normal_k) {
      estimate_normals_for(cloud, index, fresh, cfg_.tracking_normal_k, {}, cfg_.tracking_max_condition);
      for (auto id : fresh) normals_[id] = cloud.normals[id];
    }
    target_ = std::make_unique<RegistrationTarget>(std::move(cloud), std::move(index));
  }

  const SlamConfig& cfg_;
  std::vector<Vec3f> points_;
  std::vector<Vec3f> normals_;
  VoxelHashMap<std::uint32_t> voxels_;
  std::vector<std::uint32_t> pending_;  // not yet indexed
  int since_rebuild_ = 0;
  std::unique_ptr<RegistrationTarget> target_;
};

}  // namespace

Pose track_scan(const Submap& submap, const Scan& scan, const Pose& predicted, const SlamConfig& cfg) {
  if (submap.cloud.live_count() == 0) return predicted;
  Tracker t(cfg);
  t.add_cloud(submap.cloud);
  return t.track(scan, predicted);
}

Submap integrate_scan(const Submap& submap, const Scan& scan, const Pose& pose, const SlamConfig& cfg) {
  Submap out = submap;
  SubmapBuilder(out, cfg).integrate(scan, pose);
  return out;
}

void finalize_submap(Submap& submap, std::size_t k) {
  PointCloud& c = submap.cloud;
  c.normals.assign(c.size(), Vec3f::Zero());
  const auto ids = live_ids(c);
  if (ids.size() < k || k == 0) return;
  PointCloud live = select(c, ids);
  live.normals.clear();
  live = estimate_normals(live, k, submap.scan_origins);
  for (std::size_t i = 0; i < ids.size(); ++i) c.normals[ids[i]] = live.normals[i];
}

std::vector<ScanPose> session_trajectory(const SessionGraph& graph) {
  std::vector<ScanPose> out;
  for (const auto& s : graph.submaps) {
    for (const auto& sp : s.own_scan_poses()) out.push_back({sp.scan_id, s.origin * sp.pose});
  }
  return out;
}

namespace {

class SessionRunner {
 public:
  SessionRunner(std::uint32_t session, const SlamConfig& cfg)
      : cfg_(cfg), tracker_(cfg), rng_(cfg.drift_seed), odometry_info_(diagonal_information(
                                                                        cfg.odometry_sigma_translation,
                                                                        cfg.odometry_sigma_rotation)) {
    result_.graph.session = session;
  }

  SessionResult run(std::span<const Scan> scans) {
    Pose last = Pose::identity();
    Pose velocity = Pose::identity();
    bool started = false;
    for (const auto& scan : scans) {
      if (scan.points.empty()) continue;
      if (!started) {
        start_submap(Pose::identity(), Pose::identity());
        integrate(scan, Pose::identity());
        started = true;
        continue;
      }
      Pose pose;
      try {
        pose = tracker_.track(scan, last * velocity);
      } catch (const Error& e) {
        result_.error = e;
        break;
      }
      velocity = relative(last, pose);
      if (should_finish_submap(Pose::identity(), pose, cfg_.submap_translation, cfg_.submap_rotation)) {
        finish_current();
        const Pose origin = result_.graph.submaps.back().origin;
        start_submap(origin, pose);
        tracker_.rebase(pose);
        pose = Pose::identity();
      }
      integrate(scan, pose);
      last = pose;
    }
    if (started) finish_current();
    result_.trajectory = session_trajectory(result_.graph);
    return std::move(result_);
  }

 private:
  Submap& current() { return result_.graph.submaps.back(); }

  // `step` is the tracked pose of the first scan in the previous submap frame
  void start_submap(const Pose& previous_origin, const Pose& step) {
    auto& g = result_.graph;
    Submap s;
    s.id = {g.session, std::uint32_t(g.submaps.size())};
    if (g.submaps.empty()) {
      s.origin = Pose::identity();
    } else {
      std::normal_distribution<double> n(0.0, 1.0);
      const double yaw = cfg_.drift_yaw + cfg_.drift_noise_yaw * n(rng_);
      const Vec3 t(cfg_.drift_translation + cfg_.drift_noise_translation * n(rng_),
                   cfg_.drift_noise_translation * n(rng_), 0.0);
      const Pose z = step * Pose::from_yaw(yaw, t);
      s.origin = previous_origin * z;
      g.odometry_edges.push_back({g.submaps.back().id, s.id, z, odometry_info_, EdgeKind::Odometry});
    }
    g.submaps.push_back(std::move(s));
    builder_ = std::make_unique<SubmapBuilder>(current(), cfg_);
  }

  void integrate(const Scan& scan, const Pose& pose) {
    builder_->integrate(scan, pose);
    tracker_.add(scan, pose);
  }

  void finish_current() {
    builder_.reset();
    finalize_submap(current(), cfg_.normal_k);
    if (!cfg_.intra_loop_closure) return;
    auto& g = result_.graph;
    const std::uint32_t index = current().id.index;
    prepared_.push_back(prepare_submap(current(), cfg_.loop));
    const auto candidates = proximity_candidates(g, index, cfg_.loop.proximity_radius, cfg_.loop.min_index_gap);
    if (candidates.empty()) return;
    result_.intra_candidates += candidates.size();
    std::vector<ValidationResult> results(candidates.size());
    parallel_for(candidates.size(), [&](std::size_t i) {
      results[i] = validate_candidate(candidates[i], prepared_[candidates[i].current.index],
                                      prepared_[candidates[i].history.index], cfg_.loop);
    });
    bool added = false;
    for (auto& r : results) {
      if (r.edge) {
        g.loop_edges.push_back(*r.edge);
        added = true;
      } else {
        ++result_.rejected_candidates;
      }
    }
    if (added) g.apply(optimize(g.pose_graph(), cfg_.optimizer).graph);
  }

  const SlamConfig& cfg_;
  SessionResult result_;
  Tracker tracker_;
  std::unique_ptr<SubmapBuilder> builder_;
  std::vector<PreparedSubmap> prepared_;
  std::mt19937_64 rng_;
  Mat6 odometry_info_;
};

}  // namespace

SessionResult run_session(std::uint32_t session, std::span<const Scan> scans, const SlamConfig& cfg) {
  cfg.validate();
  return SessionRunner(session, cfg).run(scans);
}

}  // namespace msmap
