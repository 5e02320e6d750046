#pragma once

// Independent reference implementations shared by the unit tests and the
// acceptance run.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <vector>

#include "msmap/cloud.hpp"
#include "msmap/pose_graph.hpp"

namespace msmap::testing {

// Independent reference: absolute (translation, rotation-vector) parameters,
// residuals through 4x4 matrices and Eigen's AngleAxis, IRLS with numeric
// Jacobians and simple damping.
struct ReferenceSolver {
  const PoseGraph& g;
  double delta = 1.0;
  std::vector<SubmapId> free;

  static Eigen::Matrix4d to_matrix(const Eigen::Matrix<double, 6, 1>& p) {
    Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
    const double a = p.tail<3>().norm();
    m.block<3, 3>(0, 0) =
        a < 1e-15 ? Eigen::Matrix3d::Identity() : Eigen::AngleAxisd(a, p.tail<3>() / a).toRotationMatrix();
    m.block<3, 1>(0, 3) = p.head<3>();
    return m;
  }
  static Eigen::Matrix<double, 6, 1> from_matrix(const Eigen::Matrix4d& m) {
    Eigen::Matrix<double, 6, 1> p;
    const Eigen::AngleAxisd aa(Eigen::Matrix3d(m.block<3, 3>(0, 0)));
    p.head<3>() = m.block<3, 1>(0, 3);
    p.tail<3>() = aa.angle() * aa.axis();
    return p;
  }

  Eigen::Matrix4d vertex(const Eigen::VectorXd& x, const SubmapId& id) const {
    for (std::size_t k = 0; k < free.size(); ++k) {
      if (free[k] == id) return to_matrix(x.segment<6>(6 * k));
    }
    return g.vertices.at(id).matrix();
  }

  Eigen::VectorXd residuals(const Eigen::VectorXd& x) const {
    Eigen::VectorXd r(6 * g.edges.size());
    for (std::size_t i = 0; i < g.edges.size(); ++i) {
      const auto& e = g.edges[i];
      const Eigen::Matrix4d err = e.measurement.matrix().inverse() * vertex(x, e.from).inverse() * vertex(x, e.to);
      r.segment<6>(6 * i) = from_matrix(err);
    }
    return r;
  }

  double cost(const Eigen::VectorXd& x) const {
    const Eigen::VectorXd r = residuals(x);
    double c = 0.0;
    for (std::size_t i = 0; i < g.edges.size(); ++i) {
      const Eigen::Matrix<double, 6, 1> ri = r.segment<6>(6 * i);
      const double s = ri.dot(g.edges[i].information * ri);
      c += s <= delta * delta ? s : 2 * delta * std::sqrt(s) - delta * delta;
    }
    return c;
  }

  double solve() {
    for (const auto& [id, p] : g.vertices) {
      if (!g.fixed.contains(id)) free.push_back(id);
    }
    Eigen::VectorXd x(6 * free.size());
    for (std::size_t k = 0; k < free.size(); ++k) x.segment<6>(6 * k) = from_matrix(g.vertices.at(free[k]).matrix());
    double c = cost(x);
    double lambda = 1e-6;
    for (int it = 0; it < 500; ++it) {
      const Eigen::VectorXd r = residuals(x);
      Eigen::MatrixXd jac(r.size(), x.size());
      const double h = 1e-7;
      for (int k = 0; k < x.size(); ++k) {
        Eigen::VectorXd xp = x, xm = x;
        xp(k) += h;
        xm(k) -= h;
        jac.col(k) = (residuals(xp) - residuals(xm)) / (2 * h);
      }
      Eigen::MatrixXd w = Eigen::MatrixXd::Zero(r.size(), r.size());
      for (std::size_t i = 0; i < g.edges.size(); ++i) {
        const Eigen::Matrix<double, 6, 1> ri = r.segment<6>(6 * i);
        const double s = ri.dot(g.edges[i].information * ri);
        const double weight = s <= delta * delta ? 1.0 : delta / std::sqrt(s);
        w.block<6, 6>(6 * i, 6 * i) = weight * g.edges[i].information;
      }
      const Eigen::MatrixXd hess = jac.transpose() * w * jac;
      const Eigen::VectorXd grad = jac.transpose() * w * r;
      bool improved = false;
      for (int tries = 0; tries < 30 && !improved; ++tries) {
        Eigen::MatrixXd damped = hess;
        damped.diagonal().array() += lambda * (1.0 + hess.diagonal().array());
        const Eigen::VectorXd step = -damped.ldlt().solve(grad);
        const double nc = cost(x + step);
        if (nc < c) {
          improved = true;
          const double change = (c - nc) / c;
          x += step;
          c = nc;
          lambda = std::max(lambda / 3, 1e-12);
          if (change < 1e-15) return c;
        } else {
          lambda *= 4;
        }
      }
      if (!improved) break;
    }
    return c;
  }
};

// ---- voxel traversal -------------------------------------------------------

// Voxels in order of the midpoints between consecutive face crossings.
inline std::vector<VoxelKey> crossing_oracle(const Vec3& a, const Vec3& b, double voxel) {
  std::vector<double> ts{0.0, 1.0};
  for (int i = 0; i < 3; ++i) {
    const double lo = std::min(a[i], b[i]), hi = std::max(a[i], b[i]);
    for (double k = std::floor(lo / voxel) + 1; k * voxel < hi; k += 1.0) ts.push_back((k * voxel - a[i]) / (b[i] - a[i]));
  }
  std::sort(ts.begin(), ts.end());
  std::vector<VoxelKey> out;
  for (std::size_t i = 0; i + 1 < ts.size(); ++i) {
    const VoxelKey k = voxel_of(Vec3(a + (b - a) * (0.5 * (ts[i] + ts[i + 1]))), voxel);
    if (out.empty() || !(out.back() == k)) out.push_back(k);
  }
  return out;
}

inline std::vector<VoxelKey> march(const Vec3& a, const Vec3& b, double step, double voxel) {
  std::vector<VoxelKey> out;
  const double len = (b - a).norm();
  const int n = int(std::ceil(len / step));
  for (int i = 0; i <= n; ++i) {
    const VoxelKey k = voxel_of(Vec3(a + (b - a) * std::min(1.0, double(i) * step / len)), voxel);
    if (out.empty() || !(out.back() == k)) out.push_back(k);
  }
  return out;
}

// Length of segment a-b inside voxel k.
inline double clip_length(const Vec3& a, const Vec3& b, const VoxelKey& k, double voxel) {
  double t0 = 0.0, t1 = 1.0;
  const int key[3] = {k.x, k.y, k.z};
  for (int i = 0; i < 3; ++i) {
    const double lo = key[i] * voxel, hi = lo + voxel, d = b[i] - a[i];
    if (d == 0.0) {
      if (a[i] < lo || a[i] >= hi) return 0.0;
      continue;
    }
    double ta = (lo - a[i]) / d, tb = (hi - a[i]) / d;
    if (ta > tb) std::swap(ta, tb);
    t0 = std::max(t0, ta);
    t1 = std::min(t1, tb);
  }
  return std::max(0.0, t1 - t0) * (b - a).norm();
}


}  // namespace msmap::testing
