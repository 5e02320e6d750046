#include <gtest/gtest.h>

#include <numbers>

#include "msmap/registration.hpp"
#include "support.hpp"

using namespace msmap;
using namespace msmap::testing;

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

void expect_monotone(const IcpResult& r) {
  for (std::size_t i = 1; i < r.cost_trace.size(); ++i) EXPECT_LE(r.cost_trace[i], r.cost_trace[i - 1]);
}

}  // namespace

TEST(Icp, ExactRecovery) {
  std::mt19937_64 rng(11);
  const PointCloud target = estimate_normals(room(rng), 10);
  for (int trial = 0; trial < 5; ++trial) {
    const Pose truth = random_pose(rng, 8 * kDeg, 0.5);
    const PointCloud exact = transformed(target, truth.inverse());
    const IcpResult r = icp(exact, target, Pose::identity(), {});
    const auto d = pose_delta(r.transform, truth);
    EXPECT_LT(d.translation, 1e-6);
    EXPECT_LT(d.rotation, 1e-5);
    EXPECT_TRUE(r.converged);
    expect_monotone(r);
  }
}

TEST(Icp, NoisyRecoveryPointToPointAndPlane) {
  std::mt19937_64 rng(12);
  const PointCloud target = estimate_normals(room(rng), 10);
  for (auto variant : {IcpVariant::PointToPlane, IcpVariant::PointToPoint}) {
    IcpConfig cfg;
    cfg.variant = variant;
    for (int trial = 0; trial < 5; ++trial) {
      const Pose truth = random_pose(rng, 8 * kDeg, 0.5);
      const PointCloud source = with_noise(transformed(target, truth.inverse()), rng, 0.01);
      const IcpResult r = icp(source, target, Pose::identity(), cfg);
      const auto d = pose_delta(r.transform, truth);
      EXPECT_LT(d.translation, 0.01);
      EXPECT_LT(d.rotation, 0.5 * kDeg);
      expect_monotone(r);
    }
  }
}

TEST(Icp, DisjointCloudsHaveNoCorrespondences) {
  std::mt19937_64 rng(13);
  const PointCloud a = room(rng);
  const PointCloud b = transformed(a, Pose::from_translation(Vec3(100, 0, 0)));
  EXPECT_EQ(error_of([&] { icp(a, b, Pose::identity(), {}); }), ErrorCode::NoCorrespondences);
  EXPECT_EQ(error_of([&] { icp(PointCloud{}, b, Pose::identity(), {}); }), ErrorCode::EmptyCloud);
  EXPECT_EQ(error_of([&] { icp(a, PointCloud{}, Pose::identity(), {}); }), ErrorCode::EmptyCloud);
  const std::vector<Pose> seeds = yaw_variants(Pose::identity(), 4);
  EXPECT_EQ(error_of([&] { multi_start_icp(a, b, seeds, {}); }), ErrorCode::NoCorrespondences);
}

TEST(Icp, Equivariance) {
  std::mt19937_64 rng(14);
  const PointCloud target = room(rng);
  const Pose truth = random_pose(rng, 5 * kDeg, 0.3);
  const PointCloud source = with_noise(transformed(target, truth.inverse()), rng, 0.01);
  IcpConfig cfg;
  cfg.variant = IcpVariant::PointToPoint;
  cfg.convergence_epsilon = 1e-9;
  const IcpResult base = icp(source, target, Pose::identity(), cfg);

  // moving both clouds by T conjugates the solution
  const Pose t = random_pose(rng, 0.5, 3.0);
  const IcpResult moved = icp(transformed(source, t), transformed(target, t), Pose::identity(), cfg);
  const Pose expected = t * base.transform * t.inverse();
  const auto d = pose_delta(moved.transform, expected);
  EXPECT_LT(d.translation, 1e-4);
  EXPECT_LT(d.rotation, 1e-5);
}

TEST(Icp, ConfigValidation) {
  IcpConfig cfg;
  cfg.trim_ratio = 0.5;
  EXPECT_EQ(error_of([&] { cfg.validate(); }), ErrorCode::InvalidConfig);
  cfg = {};
  cfg.max_iterations = 0;
  EXPECT_EQ(error_of([&] { cfg.validate(); }), ErrorCode::InvalidConfig);
  cfg = {};
  EXPECT_DOUBLE_EQ(cfg.gate(0), 2.0);
  EXPECT_DOUBLE_EQ(cfg.gate(9), 0.5);
  EXPECT_DOUBLE_EQ(cfg.gate(30), 0.5);
}

TEST(Overlap, IdenticalAndShifted) {
  std::mt19937_64 rng(15);
  const PointCloud a = room(rng);
  for (double d : {0.05, 0.3, 1.0}) EXPECT_DOUBLE_EQ(overlap_ratio(a, a, Pose::identity(), d), 1.0);
  const PointCloud far = transformed(a, Pose::from_translation(Vec3(100, 0, 0)));
  EXPECT_DOUBLE_EQ(overlap_ratio(a, far, Pose::identity(), 0.3), 0.0);
  // translated by 10 d along a direction with no self-similarity
  PointCloud blob;
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  for (int i = 0; i < 200; ++i) blob.push_back(Vec3f(u(rng), u(rng), u(rng)));
  EXPECT_DOUBLE_EQ(overlap_ratio(blob, blob, Pose::from_translation(Vec3(0, 0, 3.0)), 0.3), 0.0);
}

TEST(Overlap, HalfOverlappingStrips) {
  // grid strips x in [0,10) and [5,15), spacing 0.1; analytic fraction of A
  // within d of B is the share of A with x >= 5 - d
  const double d = 0.3;
  PointCloud a, b;
  for (int i = 0; i < 100; ++i) {
    for (int j = 0; j < 20; ++j) {
      a.push_back(Vec3f(0.1f * float(i), 0.1f * float(j), 0.0f));
      b.push_back(Vec3f(5.0f + 0.1f * float(i), 0.1f * float(j), 0.0f));
    }
  }
  const double analytic = (10.0 - (5.0 - d)) / 10.0;
  EXPECT_NEAR(overlap_ratio(a, b, Pose::identity(), d), analytic, 0.05);
}

TEST(MultiStart, SingleSeedEqualsIcp) {
  std::mt19937_64 rng(16);
  const PointCloud target = estimate_normals(room(rng), 10);
  const Pose truth = random_pose(rng, 5 * kDeg, 0.3);
  const PointCloud source = with_noise(transformed(target, truth.inverse()), rng, 0.01);
  const std::vector<Pose> seeds{Pose::identity()};
  const IcpResult a = multi_start_icp(source, target, seeds, {});
  const IcpResult b = icp(source, target, Pose::identity(), {});
  EXPECT_EQ(a.transform.matrix(), b.transform.matrix());
  EXPECT_EQ(a.iterations, b.iterations);
}

TEST(MultiStart, RecoversHalfTurn) {
  std::mt19937_64 rng(17);
  const PointCloud target = estimate_normals(room(rng), 10);
  const Pose truth = Pose::from_yaw(std::numbers::pi, Vec3(0.2, -0.1, 0.0));
  const PointCloud source = with_noise(transformed(target, truth.inverse()), rng, 0.01);
  const auto seeds = yaw_variants(Pose::identity(), 4);
  const IcpResult r = multi_start_icp(source, target, seeds, {});
  const auto d = pose_delta(r.transform, truth);
  EXPECT_LT(d.translation, 0.01);
  EXPECT_LT(d.rotation, 0.5 * kDeg);
  EXPECT_GT(r.overlap_ratio, 0.9);
}
