#include <gtest/gtest.h>

#include "msmap/eval.hpp"
#include "msmap/submap_pipeline.hpp"
#include "scenarios.hpp"
#include "support.hpp"

using namespace msmap;
using namespace msmap::testing;

TEST(ShouldFinish, Thresholds) {
  const Pose o = Pose::identity();
  EXPECT_TRUE(should_finish_submap(o, Pose::from_yaw(0.0, Vec3(21, 0, 0)), 20.0, 0.7));
  EXPECT_FALSE(should_finish_submap(o, o, 20.0, 0.7));
  EXPECT_TRUE(should_finish_submap(o, Pose::from_yaw(0.71, Vec3(5, 0, 0)), 20.0, 0.7));
  EXPECT_FALSE(should_finish_submap(o, Pose::from_yaw(0.69, Vec3(19.9, 0, 0)), 20.0, 0.7));
}

TEST(ShouldFinish, MonotoneInDisplacement) {
  const Pose o = Pose::from_yaw(0.4, Vec3(3, -2, 0));
  bool seen = false;
  for (double d = 0.0; d < 40.0; d += 0.25) {
    const bool f = should_finish_submap(o, o * Pose::from_yaw(0.0, Vec3(d * 0.6, d * 0.8, 0)), 20.0, 0.7);
    if (seen) EXPECT_TRUE(f) << d;
    seen = seen || f;
  }
  EXPECT_TRUE(seen);
}

namespace {

sim::SimulatedSession street_session(double length = 16.0, double t0 = 2.0, double t1 = 6.0) {
  return sim::generate_session(crossing_street(t0, t1), straight(length), 1);
}

}  // namespace

TEST(IntegrateScan, SameScanTwiceStaysStatic) {
  const auto s = street_session();
  const SlamConfig cfg;
  Submap m = integrate_scan(Submap{}, s.scans[0], Pose::identity(), cfg);
  m = integrate_scan(m, s.scans[0], Pose::identity(), cfg);
  ASSERT_GT(m.cloud.size(), 1000u);
  for (float p : m.dynamic_probability) ASSERT_EQ(p, 0.0f);
  EXPECT_EQ(m.cloud.live_count(), m.cloud.size());
  EXPECT_EQ(m.scan_count, 2u);
}

TEST(IntegrateScan, EmptyScanLeavesSubmapUnchanged) {
  const auto s = street_session();
  const SlamConfig cfg;
  const Submap m = integrate_scan(Submap{}, s.scans[0], Pose::identity(), cfg);
  Scan empty;
  empty.id = 99;
  EXPECT_TRUE(integrate_scan(m, empty, Pose::from_yaw(0.3, Vec3(1, 2, 0)), cfg) == m);
}

TEST(IntegrateScan, CrossingMoverIsMaskedAfterItLeaves) {
  const auto w = crossing_street(2.0, 6.0);
  const auto tr = straight(16.0);
  const auto s = sim::generate_session(w, tr, 1);
  const SlamConfig cfg;
  Submap m;
  std::size_t masked_before = 0;
  for (std::size_t k = 0; k < s.scans.size(); ++k) {
    m = integrate_scan(m, s.scans[k], relative(s.ground_truth[0], s.ground_truth[k]), cfg);
    m.check_invariants();
    const std::size_t masked = m.cloud.size() - m.cloud.live_count();
    EXPECT_GE(masked, masked_before);
    masked_before = masked;
  }
  // a point is a mover point when it lies in the mover box at its scan's time
  std::size_t mover = 0, mover_masked = 0, other = 0, other_masked = 0;
  for (std::uint32_t i = 0; i < m.cloud.size(); ++i) {
    const std::size_t k = m.cloud.origin_index[i];
    const Vec3 p = s.ground_truth[0].apply(Vec3(m.cloud.points[i].cast<double>()));
    bool is_mover = false;
    for (const auto& pr : sim::resolve_primitives(w, 1, double(k) / tr.scan_rate)) {
      if (pr.label == sim::PointLabel::HighDynamic && inside_box(std::get<sim::Box>(pr.shape), p, 0.05)) is_mover = true;
    }
    (is_mover ? mover : other) += 1;
    (is_mover ? mover_masked : other_masked) += m.cloud.live[i] ? 0 : 1;
  }
  ASSERT_GT(mover, 500u);
  EXPECT_GE(double(mover_masked), 0.7 * double(mover));
  EXPECT_LE(double(other_masked), 0.01 * double(other));
}

TEST(TrackScan, EmptySubmapReturnsPrediction) {
  const auto s = street_session();
  const Pose guess = Pose::from_yaw(0.2, Vec3(1, 0, 0));
  const Pose p = track_scan(Submap{}, s.scans[0], guess, SlamConfig{});
  EXPECT_EQ(p.translation(), guess.translation());
}

TEST(TrackScan, RecoversSimulatedMotion) {
  const auto s = sim::generate_session(crossing_street(100, 101), straight(16.0), 1);
  const SlamConfig cfg;
  const Submap m = integrate_scan(Submap{}, s.scans[0], Pose::identity(), cfg);
  for (std::size_t k = 1; k <= 3; ++k) {
    const Pose truth = relative(s.ground_truth[0], s.ground_truth[k]);
    const Pose est = track_scan(m, s.scans[k], Pose::identity(), cfg);
    EXPECT_LT(pose_delta(truth, est).translation, 0.05) << k;
  }
}

TEST(TrackScan, DisjointGeometryLosesTracking) {
  const auto s = street_session();
  const SlamConfig cfg;
  const Submap m = integrate_scan(Submap{}, s.scans[0], Pose::identity(), cfg);
  Scan far = s.scans[1];
  for (auto& p : far.points) p += Vec3(500, 0, 0);
  EXPECT_EQ(error_of([&] { track_scan(m, far, Pose::identity(), cfg); }), ErrorCode::TrackingLost);
}

TEST(RunSession, ShortSequenceGivesOneSubmap) {
  const auto s = street_session(16.0);
  const auto r = run_session(1, s.scans, SlamConfig{});
  ASSERT_FALSE(r.error);
  ASSERT_EQ(r.graph.submaps.size(), 1u);
  EXPECT_TRUE(r.graph.odometry_edges.empty());
  EXPECT_TRUE(r.graph.loop_edges.empty());
  const Submap& first = r.graph.submaps.front();
  EXPECT_EQ(first.origin.translation(), Vec3::Zero());
  EXPECT_EQ(first.scan_poses.front().pose.translation(), Vec3::Zero());
  EXPECT_EQ(first.scan_poses.front().pose.rotation().coeffs(), Quat::Identity().coeffs());
  EXPECT_EQ(first.scan_count, s.scans.size());
}

TEST(RunSession, DisjointSecondScanTruncates) {
  auto s = street_session(16.0);
  for (auto& p : s.scans[1].points) p += Vec3(500, 0, 0);
  const auto r = run_session(1, s.scans, SlamConfig{});
  ASSERT_TRUE(r.error);
  EXPECT_EQ(r.error->code(), ErrorCode::TrackingLost);
  ASSERT_EQ(r.graph.submaps.size(), 1u);
  EXPECT_EQ(r.graph.submaps.front().scan_count, 1u);
  EXPECT_EQ(r.trajectory.size(), 1u);
}

TEST(RunSession, OriginsChainThroughOdometry) {
  const auto s = sim::generate_session(crossing_street(100, 101), straight(55.0), 1);
  SlamConfig cfg;
  cfg.intra_loop_closure = false;
  cfg.drift_yaw = 0.01;
  cfg.drift_noise_translation = 0.1;
  cfg.drift_seed = 3;
  const auto r = run_session(1, s.scans, cfg);
  ASSERT_FALSE(r.error);
  ASSERT_GE(r.graph.submaps.size(), 3u);
  ASSERT_EQ(r.graph.odometry_edges.size(), r.graph.submaps.size() - 1);
  Pose chain = Pose::identity();
  for (std::size_t i = 0; i < r.graph.odometry_edges.size(); ++i) {
    const auto& e = r.graph.odometry_edges[i];
    EXPECT_EQ(e.from.index, i);
    EXPECT_EQ(e.to.index, i + 1);
    EXPECT_EQ(e.kind, EdgeKind::Odometry);
    chain = chain * e.measurement;
    const Pose& o = r.graph.submaps[i + 1].origin;
    EXPECT_EQ(chain.translation(), o.translation());
    EXPECT_EQ(chain.rotation().coeffs(), o.rotation().coeffs());
  }
  for (const auto& m : r.graph.submaps) {
    m.check_invariants();
    EXPECT_LE(m.cloud.live_count(), m.cloud.size());
    // the first scan of a later submap sits at its origin
    EXPECT_EQ(m.scan_poses.front().pose.translation(), Vec3::Zero());
  }
}

TEST(RunSession, PerScanPoseErrorOnStraightRoute) {
  const auto route = straight(55.0);
  sim::CampusOptions opt;
  opt.sessions = 1;
  const auto s = sim::generate_session(sim::generate_campus(route, opt), route, 1);
  SlamConfig cfg;
  cfg.intra_loop_closure = false;
  const auto r = run_session(1, s.scans, cfg);
  ASSERT_FALSE(r.error);
  const auto truth = relative_truth(s.ground_truth);
  const auto e = trajectory_error_in_frame(r.trajectory, truth);
  EXPECT_EQ(e.count, s.scans.size());
  EXPECT_LT(e.max, 0.05);
}

TEST(RunSession, LoopIsClosed) {
  const auto route = loop_route(60, 40);
  sim::CampusOptions opt;
  opt.sessions = 1;
  const auto world = sim::generate_campus(route, opt);
  const auto s = sim::generate_session(world, route, 1);
  SlamConfig cfg;
  cfg.drift_yaw = 0.003;
  cfg.drift_noise_yaw = 0.0015;
  cfg.drift_noise_translation = 0.03;
  cfg.drift_seed = 5;
  const auto r = run_session(1, s.scans, cfg);
  ASSERT_FALSE(r.error);
  EXPECT_GE(r.graph.loop_edges.size(), 1u);
  const auto truth = relative_truth(s.ground_truth);
  EXPECT_LT(absolute_trajectory_error(r.trajectory, truth).rms, 0.5);
  for (const auto& e : r.graph.loop_edges) {
    EXPECT_EQ(e.kind, EdgeKind::IntraLoop);
    EXPECT_GE(e.from.index, e.to.index + 2);
  }
}

TEST(SlamConfig, Validation) {
  SlamConfig cfg;
  cfg.submap_translation = 0.0;
  EXPECT_EQ(error_of([&] { cfg.validate(); }), ErrorCode::InvalidConfig);
  cfg = SlamConfig{};
  cfg.dynamic_cut = 1.5;
  EXPECT_EQ(error_of([&] { cfg.validate(); }), ErrorCode::InvalidConfig);
  EXPECT_EQ(error_of([] { SlamConfig{}.validate(); }), ErrorCode::IoError);
}
