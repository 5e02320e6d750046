#pragma once

#include <cmath>
#include <numbers>
#include <random>

#include "msmap/cloud.hpp"
#include "msmap/error.hpp"
#include "msmap/pose.hpp"

namespace msmap::testing {

inline Pose random_pose(std::mt19937_64& rng, double max_angle, double max_translation) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Vec3 axis(u(rng), u(rng), u(rng));
  axis.normalize();
  const double angle = std::abs(u(rng)) * max_angle;
  Vec3 t(u(rng), u(rng), u(rng));
  t = t.normalized() * std::abs(u(rng)) * max_translation;
  return {Quat(Eigen::AngleAxisd(angle, axis)), t};
}

/// Asymmetric room: floor, two walls, a pillar and a crate.
inline PointCloud room(std::mt19937_64& rng, int per_surface = 800) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  PointCloud c;
  auto add = [&](const Vec3& p) { c.push_back(p.cast<float>()); };
  for (int i = 0; i < per_surface; ++i) add(Vec3(-8 + 16 * u(rng), -6 + 12 * u(rng), 0.0));
  for (int i = 0; i < per_surface; ++i) add(Vec3(-8.0, -6 + 12 * u(rng), 3 * u(rng)));
  for (int i = 0; i < per_surface; ++i) add(Vec3(-8 + 16 * u(rng), 6.0, 3 * u(rng)));
  for (int i = 0; i < per_surface / 2; ++i) {
    const double a = 2 * std::numbers::pi * u(rng);
    add(Vec3(3 + 0.5 * std::cos(a), -2 + 0.5 * std::sin(a), 3 * u(rng)));
  }
  for (int i = 0; i < per_surface / 2; ++i) {
    const int face = int(u(rng) * 3);
    const double a = u(rng), b = u(rng);
    if (face == 0) add(Vec3(-4 + 2 * a, 1 + 1.5 * b, 1.0));
    if (face == 1) add(Vec3(-2.0, 1 + 1.5 * a, b));
    if (face == 2) add(Vec3(-4 + 2 * a, 1.0, b));
  }
  return c;
}

inline PointCloud with_noise(PointCloud c, std::mt19937_64& rng, double sigma) {
  std::normal_distribution<double> n(0.0, sigma);
  for (auto& p : c.points) p += Vec3(n(rng), n(rng), n(rng)).cast<float>();
  return c;
}

template <typename F>
ErrorCode error_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  return ErrorCode::IoError;  // sentinel: nothing thrown
}

}  // namespace msmap::testing
