#include "msmap/cloud.hpp"

#include <Eigen/Eigenvalues>
#include <cmath>

#include "msmap/error.hpp"

namespace msmap {

std::size_t PointCloud::live_count() const {
  std::size_t n = 0;
  for (auto l : live) n += l != 0;
  return n;
}

void PointCloud::check_invariants() const {
  const auto n = points.size();
  if (live.size() != n) throw Error(ErrorCode::InvalidConfig, "live mask length mismatch");
  if (!normals.empty() && normals.size() != n) throw Error(ErrorCode::InvalidConfig, "normals length mismatch");
  if (!origin_index.empty() && origin_index.size() != n) {
    throw Error(ErrorCode::InvalidConfig, "origin index length mismatch");
  }
}

bool operator==(const PointCloud& a, const PointCloud& b) {
  return a.points == b.points && a.normals == b.normals && a.origin_index == b.origin_index && a.live == b.live;
}

PointCloud select(const PointCloud& cloud, std::span<const std::uint32_t> ids) {
  PointCloud out;
  out.points.reserve(ids.size());
  out.live.reserve(ids.size());
  for (auto id : ids) {
    out.points.push_back(cloud.points[id]);
    out.live.push_back(cloud.live[id]);
    if (cloud.has_normals()) out.normals.push_back(cloud.normals[id]);
    if (cloud.has_origins()) out.origin_index.push_back(cloud.origin_index[id]);
  }
  return out;
}

std::vector<std::uint32_t> live_ids(const PointCloud& cloud) {
  std::vector<std::uint32_t> ids;
  ids.reserve(cloud.size());
  for (std::uint32_t i = 0; i < cloud.size(); ++i) {
    if (cloud.live[i]) ids.push_back(i);
  }
  return ids;
}

PointCloud transformed(const PointCloud& cloud, const Pose& pose) {
  PointCloud out = cloud;
  const Eigen::Matrix3f r = pose.rotation_matrix().cast<float>();
  for (auto& p : out.points) p = pose.apply(p);
  for (auto& n : out.normals) n = r * n;
  return out;
}

SpatialIndex::SpatialIndex(std::span<const Vec3f> points) {
  if (points.empty()) throw Error(ErrorCode::EmptyCloud, "cannot index an empty cloud");
  std::vector<float> data;
  data.reserve(points.size() * 3);
  for (const auto& p : points) data.insert(data.end(), {p.x(), p.y(), p.z()});
  tree_ = KdTree<float, 3>(std::move(data), 3);
}

Neighbor SpatialIndex::nearest(const Vec3f& query) const {
  Neighbor n = tree_.nearest(query.data());
  n.distance = std::sqrt(n.distance);
  return n;
}

Neighbor SpatialIndex::nearest(const Vec3f& query, double max_distance) const {
  Neighbor n = tree_.nearest(query.data(), max_distance * max_distance);
  n.distance = std::sqrt(n.distance);
  return n;
}

std::vector<Neighbor> SpatialIndex::knn(const Vec3f& query, std::size_t k) const {
  auto out = tree_.knn(query.data(), k);
  for (auto& n : out) n.distance = std::sqrt(n.distance);
  return out;
}

std::vector<std::uint32_t> SpatialIndex::radius_query(const Vec3f& query, double r) const {
  return tree_.radius(query.data(), r * r);
}

namespace {

Vec3f normal_from_neighbors(const PointCloud& cloud, const std::vector<Neighbor>& nn, double max_condition) {
  Vec3 mean = Vec3::Zero();
  for (const auto& n : nn) mean += cloud.points[n.id].cast<double>();
  mean /= double(nn.size());
  Mat3 cov = Mat3::Zero();
  for (const auto& n : nn) {
    const Vec3 d = cloud.points[n.id].cast<double>() - mean;
    cov += d * d.transpose();
  }
  Eigen::SelfAdjointEigenSolver<Mat3> solver;
  solver.computeDirect(cov);
  const Vec3 ev = solver.eigenvalues();  // ascending
  if (!(ev(2) > 0.0) || ev(1) <= 0.0 || ev(2) / ev(1) > max_condition) return Vec3f::Zero();
  return solver.eigenvectors().col(0).normalized().cast<float>();
}

}  // namespace

void estimate_normals_for(PointCloud& cloud, const SpatialIndex& index, std::span<const std::uint32_t> ids,
                          std::size_t k, std::span<const Vec3f> origins, double max_condition) {
  if (cloud.normals.size() != cloud.size()) cloud.normals.resize(cloud.size(), Vec3f::Zero());
  const bool orient = cloud.has_origins() && !origins.empty();
  for (auto id : ids) {
    Vec3f n = normal_from_neighbors(cloud, index.knn(cloud.points[id], k), max_condition);
    if (orient && !n.isZero()) {
      const auto oi = cloud.origin_index[id];
      if (oi >= origins.size()) throw Error(ErrorCode::MissingOrigins, "origin index out of range");
      if (n.dot(origins[oi] - cloud.points[id]) < 0.0f) n = -n;
    }
    cloud.normals[id] = n;
  }
}

PointCloud estimate_normals(const PointCloud& cloud, std::size_t k, std::span<const Vec3f> origins,
                            double max_condition) {
  if (k == 0 || cloud.size() < k) {
    throw Error(ErrorCode::TooFewPoints, "need at least " + std::to_string(k) + " points, have " +
                                             std::to_string(cloud.size()));
  }
  PointCloud out = cloud;
  out.normals.assign(cloud.size(), Vec3f::Zero());
  const SpatialIndex index(cloud);
  std::vector<std::uint32_t> ids(cloud.size());
  for (std::uint32_t i = 0; i < ids.size(); ++i) ids[i] = i;
  estimate_normals_for(out, index, ids, k, origins, max_condition);
  return out;
}

std::vector<std::uint32_t> voxel_downsample_ids(const PointCloud& cloud, double size) {
  VoxelSet seen;
  seen.reserve(cloud.size());
  std::vector<std::uint32_t> ids;
  for (std::uint32_t i = 0; i < cloud.size(); ++i) {
    if (!cloud.live[i]) continue;
    if (seen.insert(voxel_of(cloud.points[i], size)).second) ids.push_back(i);
  }
  return ids;
}

PointCloud voxel_downsample(const PointCloud& cloud, double size) {
  return select(cloud, voxel_downsample_ids(cloud, size));
}

}  // namespace msmap
