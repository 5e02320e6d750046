#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace msmap {

using Vec3 = Eigen::Vector3d;
using Vec3f = Eigen::Vector3f;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using Mat3 = Eigen::Matrix3d;
using Mat6 = Eigen::Matrix<double, 6, 6>;
using Quat = Eigen::Quaterniond;

/// Rigid transform in 3D. The rotation is kept as a unit quaternion and
/// renormalized whenever a new pose is produced.
class Pose {
 public:
  Pose() : rotation_(Quat::Identity()), translation_(Vec3::Zero()) {}
  Pose(const Quat& rotation, const Vec3& translation)
      : rotation_(rotation.normalized()), translation_(translation) {}

  static Pose identity() { return {}; }
  static Pose from_translation(const Vec3& t) { return {Quat::Identity(), t}; }
  /// Rotation about +z by `yaw` radians followed by translation `t`.
  static Pose from_yaw(double yaw, const Vec3& t = Vec3::Zero()) {
    return {Quat(Eigen::AngleAxisd(yaw, Vec3::UnitZ())), t};
  }
  static Pose from_matrix(const Eigen::Matrix4d& m);
  /// Takes `rotation` as already unit-norm (no renormalization), so stored
  /// poses reload bit-for-bit.
  static Pose from_unit(const Quat& rotation, const Vec3& translation) {
    Pose p;
    p.rotation_ = rotation;
    p.translation_ = translation;
    return p;
  }

  const Quat& rotation() const { return rotation_; }
  const Vec3& translation() const { return translation_; }
  Mat3 rotation_matrix() const { return rotation_.toRotationMatrix(); }
  Eigen::Matrix4d matrix() const;

  /// Rotation angle in [0, pi].
  double angle() const;
  double yaw() const;

  Pose inverse() const;
  Vec3 apply(const Vec3& p) const { return rotation_ * p + translation_; }
  Vec3f apply(const Vec3f& p) const { return apply(Vec3(p.cast<double>())).cast<float>(); }

 private:
  Quat rotation_;
  Vec3 translation_;
};

/// Transform applying `b` first, then `a`.
Pose compose(const Pose& a, const Pose& b);
inline Pose operator*(const Pose& a, const Pose& b) { return compose(a, b); }
/// Exact coefficient equality.
inline bool operator==(const Pose& a, const Pose& b) {
  return a.translation() == b.translation() && a.rotation().coeffs() == b.rotation().coeffs();
}

/// inverse(a) * b, so that compose(a, relative(a, b)) == b.
Pose relative(const Pose& a, const Pose& b);

/// Minimal 6-vector (tx, ty, tz, wx, wy, wz): translation followed by the
/// rotation vector. Throws AngleNearPi when the rotation angle is within
/// 1e-6 of pi.
Vec6 log_map(const Pose& p);
Pose exp_map(const Vec6& v);

Mat3 skew(const Vec3& v);
Quat so3_exp(const Vec3& w);
Vec3 so3_log(const Quat& q);
/// Inverse of the SO(3) left Jacobian evaluated at rotation vector `phi`.
Mat3 so3_left_jacobian_inverse(const Vec3& phi);

/// Translation norm and rotation angle of relative(a, b).
struct PoseDelta {
  double translation;
  double rotation;
};
PoseDelta pose_delta(const Pose& a, const Pose& b);

}  // namespace msmap
