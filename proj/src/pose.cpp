#include "msmap/pose.hpp"

#include <cmath>
#include <numbers>

#include "msmap/error.hpp"

namespace msmap {

Pose Pose::from_matrix(const Eigen::Matrix4d& m) {
  return {Quat(Mat3(m.topLeftCorner<3, 3>())), m.topRightCorner<3, 1>()};
}

Eigen::Matrix4d Pose::matrix() const {
  Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
  m.topLeftCorner<3, 3>() = rotation_matrix();
  m.topRightCorner<3, 1>() = translation_;
  return m;
}

double Pose::angle() const {
  const double w = std::min(1.0, std::abs(rotation_.w()));
  const double v = rotation_.vec().norm();
  return 2.0 * std::atan2(v, w);
}

double Pose::yaw() const {
  const Mat3 r = rotation_matrix();
  return std::atan2(r(1, 0), r(0, 0));
}

Pose Pose::inverse() const {
  const Quat inv = rotation_.conjugate();
  return {inv, -(inv * translation_)};
}

Pose compose(const Pose& a, const Pose& b) {
  return {a.rotation() * b.rotation(), a.rotation() * b.translation() + a.translation()};
}

Pose relative(const Pose& a, const Pose& b) { return compose(a.inverse(), b); }

Mat3 skew(const Vec3& v) {
  Mat3 m;
  m << 0.0, -v.z(), v.y(), v.z(), 0.0, -v.x(), -v.y(), v.x(), 0.0;
  return m;
}

Quat so3_exp(const Vec3& w) {
  const double theta = w.norm();
  if (theta < 1e-12) {
    // second-order series keeps the map smooth near zero
    Quat q(1.0, 0.5 * w.x(), 0.5 * w.y(), 0.5 * w.z());
    return q.normalized();
  }
  return Quat(Eigen::AngleAxisd(theta, w / theta));
}

Vec3 so3_log(const Quat& q_in) {
  Quat q = q_in.normalized();
  if (q.w() < 0.0) q.coeffs() = -q.coeffs();
  const double v = q.vec().norm();
  if (v < 1e-12) return 2.0 * q.vec() / q.w();
  const double theta = 2.0 * std::atan2(v, q.w());
  return q.vec() * (theta / v);
}

Mat3 so3_left_jacobian_inverse(const Vec3& phi) {
  const double theta = phi.norm();
  const Mat3 k = skew(phi);
  if (theta < 1e-6) return Mat3::Identity() - 0.5 * k + (1.0 / 12.0) * k * k;
  const double coeff =
      1.0 / (theta * theta) - (1.0 + std::cos(theta)) / (2.0 * theta * std::sin(theta));
  return Mat3::Identity() - 0.5 * k + coeff * k * k;
}

Vec6 log_map(const Pose& p) {
  if (p.angle() >= std::numbers::pi - 1e-6) {
    throw Error(ErrorCode::AngleNearPi, "rotation angle too close to pi for log_map");
  }
  Vec6 v;
  v.head<3>() = p.translation();
  v.tail<3>() = so3_log(p.rotation());
  return v;
}

Pose exp_map(const Vec6& v) { return {so3_exp(v.tail<3>()), v.head<3>()}; }

PoseDelta pose_delta(const Pose& a, const Pose& b) {
  const Pose d = relative(a, b);
  return {d.translation().norm(), d.angle()};
}

}  // namespace msmap
