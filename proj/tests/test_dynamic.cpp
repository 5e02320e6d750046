#include <gtest/gtest.h>

#include <algorithm>
#include <set>
#include <cstring>
#include <numeric>
#include <sstream>

#include "msmap/dynamic_detection.hpp"
#include "scenarios.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace msmap;
using namespace msmap::testing;

namespace {

/// Submap over a plain cloud observed from one sensor origin.
Submap submap_of(const PointCloud& cloud, const Vec3f& origin, SubmapId id = {1, 0}) {
  Submap s;
  s.id = id;
  s.cloud = cloud;
  s.cloud.origin_index.assign(cloud.size(), 0);
  s.scan_origins = {origin};
  s.scan_poses = {{0, Pose::from_translation(origin.cast<double>())}};
  s.scan_count = 1;
  s.dynamic_probability.assign(cloud.size(), 0.0f);
  finalize_submap(s, 10);
  return s;
}

struct MovedCar {
  sim::WorldSpec world = moved_car_street();
  sim::SimulatedSession s1, s2;
  Submap history, current;
  Pose align;
  MovedCar() {
    const auto route = straight(40.0);
    auto r2 = route;
    r2.lateral_offset = 0.3;
    r2.start_offset = 0.5;
    s1 = sim::generate_session(world, route, 1);
    s2 = sim::generate_session(world, r2, 2);
    history = truth_submap(s1, 0, 20, {1, 0});
    current = truth_submap(s2, 0, 20, {2, 0});
    align = relative(current.origin, history.origin);
  }
  Vec3 world_point(const Submap& s, std::uint32_t id) const {
    return s.origin.apply(Vec3(s.cloud.points[id].cast<double>()));
  }
};

const MovedCar& moved_car() {
  static const MovedCar m;
  return m;
}

std::set<std::uint32_t> as_set(const std::vector<std::uint32_t>& v) { return {v.begin(), v.end()}; }

}  // namespace

TEST(Partition, IdenticalCloudsHaveNoComplement) {
  std::mt19937_64 rng(1);
  const Submap s = submap_of(room(rng), Vec3f(0, 0, 1.5));
  const auto p = partition(s, s, Pose::identity(), DynamicConfig{});
  EXPECT_TRUE(p.complement_current.empty());
  EXPECT_TRUE(p.complement_history.empty());
  EXPECT_EQ(p.common_current.size(), s.cloud.size());
  EXPECT_EQ(p.seeds.size(), s.cloud.size());
}

TEST(Partition, IsolatedClusterIsTheComplement) {
  std::mt19937_64 rng(2);
  const PointCloud a = room(rng);
  PointCloud b = a;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 60; ++i) b.push_back(Vec3f(float(30 + u(rng)), float(20 + u(rng)), 0.0f));
  const Submap ha = submap_of(a, Vec3f(0, 0, 1.5), {1, 0});
  const Submap cb = submap_of(b, Vec3f(0, 0, 1.5), {2, 0});
  const auto p = partition(cb, ha, Pose::identity(), DynamicConfig{});
  ASSERT_EQ(p.complement_current.size(), 60u);
  for (std::size_t i = 0; i < 60; ++i) EXPECT_EQ(p.complement_current[i], a.size() + i);
  EXPECT_TRUE(p.complement_history.empty());
}

TEST(Partition, SetsCoverLivePointsDisjointly) {
  const auto& m = moved_car();
  const auto p = partition(m.current, m.history, m.align, DynamicConfig{});
  auto check = [](const std::vector<std::uint32_t>& common, const std::vector<std::uint32_t>& comp, const Submap& s) {
    std::vector<std::uint32_t> all = common;
    all.insert(all.end(), comp.begin(), comp.end());
    std::sort(all.begin(), all.end());
    EXPECT_EQ(all, live_ids(s.cloud));
    EXPECT_EQ(std::adjacent_find(all.begin(), all.end()), all.end());
  };
  check(p.common_current, p.complement_current, m.current);
  check(p.common_history, p.complement_history, m.history);
}

TEST(Partition, SeedsDoNotDependOnWhichSideIsIndexed) {
  const auto& m = moved_car();
  const auto ab = partition(m.current, m.history, m.align, DynamicConfig{});
  const auto ba = partition(m.history, m.current, m.align.inverse(), DynamicConfig{});
  std::vector<std::pair<std::uint32_t, std::uint32_t>> swapped;
  for (const auto& [h, c] : ba.seeds) swapped.emplace_back(c, h);
  std::sort(swapped.begin(), swapped.end());
  // float rounding of the two transform directions may flip pairs sitting
  // exactly at d_beta
  std::vector<std::pair<std::uint32_t, std::uint32_t>> diff;
  std::set_symmetric_difference(ab.seeds.begin(), ab.seeds.end(), swapped.begin(), swapped.end(),
                                std::back_inserter(diff));
  EXPECT_LE(diff.size(), ab.seeds.size() / 10000);
}

TEST(Partition, MovedCarLandsInBothComplements) {
  const auto& m = moved_car();
  const auto p = partition(m.current, m.history, m.align, DynamicConfig{});
  const auto& car = m.world.low_dynamic.front();
  auto fraction = [&](const Submap& s, const std::vector<std::uint32_t>& comp, std::uint32_t session) {
    const auto in_comp = as_set(comp);
    std::size_t n = 0, hit = 0;
    for (auto id : live_ids(s.cloud)) {
      if (!inside_box(placed_box(car, session), m.world_point(s, id), 0.1)) continue;
      ++n;
      hit += in_comp.count(id);
    }
    EXPECT_GT(n, 100u);
    return double(hit) / double(n);
  };
  EXPECT_GE(fraction(m.history, p.complement_history, 1), 0.95);
  EXPECT_GE(fraction(m.current, p.complement_current, 2), 0.95);
}

TEST(Partition, EmptyCloud) {
  Submap empty;
  std::mt19937_64 rng(3);
  const Submap s = submap_of(room(rng), Vec3f(0, 0, 1.5));
  EXPECT_EQ(error_of([&] { partition(empty, s, Pose::identity(), DynamicConfig{}); }), ErrorCode::EmptyCloud);
}

// ---- voxel traversal --------------------------------------------------------

TEST(Traverse, MatchesCrossingOracle) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(-3.0, 3.0);
  for (int trial = 0; trial < 1000; ++trial) {
    const Vec3 a(u(rng), u(rng), u(rng)), b(u(rng), u(rng), u(rng));
    EXPECT_EQ(traverse_voxels(a, b, 0.04), crossing_oracle(a, b, 0.04)) << trial;
  }
}

TEST(Traverse, MatchesRayMarching) {
  // a march at voxel/10 can only skip corner clips shorter than its step
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-3.0, 3.0);
  const double voxel = 0.04, step = voxel / 10;
  for (int trial = 0; trial < 1000; ++trial) {
    const Vec3 a(u(rng), u(rng), u(rng)), b(u(rng), u(rng), u(rng));
    const auto exact = traverse_voxels(a, b, voxel);
    const auto marched = march(a, b, step, voxel);
    std::size_t j = 0;
    for (const auto& k : exact) {
      if (j < marched.size() && marched[j] == k) {
        ++j;
      } else {
        EXPECT_LT(clip_length(a, b, k, voxel), step) << trial;
      }
    }
    EXPECT_EQ(j, marched.size()) << trial;
  }
}

TEST(Traverse, Degenerate) {
  const auto one = traverse_voxels(Vec3(0.01, 0.01, 0.01), Vec3(0.02, 0.03, 0.01), 0.04);
  ASSERT_EQ(one.size(), 1u);
  const auto axis = traverse_voxels(Vec3(0.02, 0.02, 0.02), Vec3(0.22, 0.02, 0.02), 0.04);
  ASSERT_EQ(axis.size(), 6u);
  for (int i = 0; i < 6; ++i) EXPECT_EQ(axis[i], (VoxelKey{i, 0, 0}));
  const auto back = traverse_voxels(Vec3(0.22, 0.02, 0.02), Vec3(0.02, 0.02, 0.02), 0.04);
  EXPECT_EQ(back, std::vector<VoxelKey>(axis.rbegin(), axis.rend()));
}

// ---- front voxels -------------------------------------------------------------

TEST(FrontVoxels, SinglePoint) {
  PointCloud c;
  c.push_back(Vec3f(3.0f, 1.0f, 0.5f));
  c.origin_index = {0};
  const std::vector<Vec3f> origins{Vec3f::Zero()};
  const std::vector<std::uint32_t> ids{0};
  const auto f = front_voxels(c, ids, origins, 0.04);
  ASSERT_EQ(f.cells.size(), 1u);
  EXPECT_TRUE(f.contains(voxel_of(c.points[0], 0.04)));
}

TEST(FrontVoxels, OcclusionKeepsTheNearerPoint) {
  PointCloud c;
  c.push_back(Vec3f(6.0f, 3.0f, 1.5f));
  c.push_back(Vec3f(2.0f, 1.0f, 0.5f));
  c.origin_index = {0, 0};
  const std::vector<Vec3f> origins{Vec3f::Zero()};
  const std::vector<std::uint32_t> ids{0, 1};
  const auto f = front_voxels(c, ids, origins, 0.04);
  ASSERT_EQ(f.cells.size(), 1u);
  EXPECT_TRUE(f.contains(voxel_of(c.points[1], 0.04)));
  EXPECT_EQ(f.rays.at(voxel_of(c.points[1], 0.04)), (std::vector<std::uint32_t>{0, 1}));
}

TEST(FrontVoxels, MatchesDenseSampling) {
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> u(-4.0, 4.0);
  const double voxel = 0.25;
  for (int trial = 0; trial < 5; ++trial) {
    PointCloud c;
    for (int i = 0; i < 300; ++i) c.push_back(Vec3(u(rng), u(rng), u(rng)).cast<float>());
    const std::vector<Vec3f> origins{Vec3f(0.1f, 0.2f, 0.3f), Vec3f(-6.0f, 5.0f, 1.0f)};
    for (std::size_t i = 0; i < c.size(); ++i) c.origin_index.push_back(std::uint16_t(i % 2));
    std::vector<std::uint32_t> ids(c.size());
    std::iota(ids.begin(), ids.end(), 0u);
    VoxelSet occupied;
    for (const auto& p : c.points) occupied.insert(voxel_of(p, voxel));

    std::set<VoxelKey> expect;
    for (std::size_t i = 0; i < c.size(); ++i) {
      const Vec3 o = origins[c.origin_index[i]].cast<double>();
      for (const auto& k : march(o, c.points[i].cast<double>(), voxel / 1000, voxel)) {
        if (occupied.contains(k)) {
          expect.insert(k);
          break;
        }
      }
    }
    const auto f = front_voxels(c, ids, origins, voxel);
    const auto keys = f.sorted_keys();
    EXPECT_EQ(std::set<VoxelKey>(keys.begin(), keys.end()), expect);
    for (const auto& k : keys) EXPECT_TRUE(occupied.contains(k));
  }
}

TEST(FrontVoxels, MissingOrigins) {
  PointCloud c;
  c.push_back(Vec3f(1, 1, 1));
  const std::vector<std::uint32_t> ids{0};
  EXPECT_EQ(error_of([&] { front_voxels(c, ids, {}, 0.04); }), ErrorCode::MissingOrigins);
  c.origin_index = {3};
  const std::vector<Vec3f> origins{Vec3f::Zero()};
  EXPECT_EQ(error_of([&] { front_voxels(c, ids, origins, 0.04); }), ErrorCode::MissingOrigins);
}

// ---- detection ---------------------------------------------------------------

TEST(Detect, BoxSeenThroughIsDynamic) {
  std::mt19937_64 rng(7);
  // history: floor, far wall and a crate in front of it; current: crate gone
  PointCloud floor_wall;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 3000; ++i) floor_wall.push_back(Vec3f(float(10 * u(rng)), float(-3 + 6 * u(rng)), -1.5f));
  for (int i = 0; i < 2000; ++i) floor_wall.push_back(Vec3f(10.0f, float(-3 + 6 * u(rng)), float(-1.5 + 3 * u(rng))));
  // the history sees the box, so it lacks whatever the box hides
  PointCloud with_box;
  for (const auto& p : floor_wall.points) {
    const Vec3f at = p * (5.0f / p.x());
    const bool hidden = p.x() > 5.0f && std::abs(at.y()) <= 0.5f && at.z() >= -1.3f && at.z() <= -0.3f;
    if (!hidden) with_box.push_back(p);
  }
  const std::size_t first_box = with_box.size();
  for (int i = 0; i < 400; ++i) with_box.push_back(Vec3f(5.0f, float(-0.5 + u(rng)), float(-1.3 + u(rng))));
  const Submap history = submap_of(with_box, Vec3f::Zero(), {1, 0});
  const Submap current = submap_of(floor_wall, Vec3f::Zero(), {2, 0});
  const DynamicConfig cfg;
  const auto part = partition(current, history, Pose::identity(), cfg);
  const auto labels = detect_dynamics(part, current, history, Pose::identity(), cfg);
  const auto dyn = as_set(labels.dynamic);
  std::size_t box_hits = 0;
  for (std::size_t i = first_box; i < with_box.size(); ++i) box_hits += dyn.count(std::uint32_t(i));
  EXPECT_GE(box_hits, 380u);
  EXPECT_LE(dyn.size() - box_hits, 20u);
  EXPECT_FALSE(labels.mend.empty());
}

TEST(Detect, CanopyAboveHeightLimitIsNeverLabeled) {
  using namespace sim;
  WorldSpec w;
  w.sessions = 2;
  w.statics.push_back({Plane{Vec3(0, 0, 0), Vec3(0, 0, 1)}, PointLabel::Static, 1});
  w.statics.push_back({Box{Vec3(20, 8, 4), Vec3(60, 1, 8), 0}, PointLabel::Static, 2});
  w.statics.push_back({Box{Vec3(20, -8, 4), Vec3(60, 1, 8), 0}, PointLabel::Static, 3});
  LowDynamicObject canopy;  // foliage present in one session only
  canopy.id = 4;
  canopy.size = Vec3(4, 4, 2.5);
  canopy.clearance = 3.0;
  canopy.placements[1] = Placement{Vec2(12, -4), 0.0};
  canopy.placements[2] = std::nullopt;
  w.low_dynamic.push_back(canopy);
  const auto route = straight(25.0);
  const auto s1 = generate_session(w, route, 1);
  const auto s2 = generate_session(w, route, 2);
  const Submap h = truth_submap(s1, 0, 20, {1, 0});
  const Submap c = truth_submap(s2, 0, 20, {2, 0});
  const Pose align = relative(c.origin, h.origin);
  DynamicConfig cfg;
  const auto part = partition(c, h, align, cfg);
  const auto labels = detect_dynamics(part, c, h, align, cfg);
  for (auto id : labels.dynamic) EXPECT_LE(h.cloud.points[id].z() + cfg.sensor_height, cfg.height_limit);
  for (auto id : labels.coarse) EXPECT_LE(h.cloud.points[id].z() + cfg.sensor_height, cfg.height_limit);
  // without the exemption the same canopy is found
  cfg.height_limit = 100.0;
  const auto unlimited = detect_dynamics(part, c, h, align, cfg);
  std::size_t canopy_hits = 0;
  for (auto id : unlimited.dynamic) {
    canopy_hits += inside_box(placed_box(canopy, 1), h.origin.apply(Vec3(h.cloud.points[id].cast<double>())), 0.1);
  }
  EXPECT_GT(canopy_hits, 50u);
}

TEST(Detect, MovedCarScene) {
  const auto& m = moved_car();
  const DynamicConfig cfg;
  const auto part = partition(m.current, m.history, m.align, cfg);
  const auto labels = detect_dynamics(part, m.current, m.history, m.align, cfg);
  const auto dyn = as_set(labels.dynamic);
  const auto old = placed_box(m.world.low_dynamic.front(), 1);
  std::size_t car = 0, car_hit = 0, low = 0, low_fp = 0, high_fp = 0;
  for (auto id : live_ids(m.history.cloud)) {
    const Vec3 p = m.world_point(m.history, id);
    if (inside_box(old, p, 0.1)) {
      ++car;
      car_hit += dyn.count(id);
    } else if (p.z() <= 2.0) {
      ++low;
      low_fp += dyn.count(id);
    } else {
      high_fp += dyn.count(id);
    }
  }
  EXPECT_GE(double(car_hit), 0.8 * double(car));
  EXPECT_LE(double(low_fp), 0.05 * double(low));
  EXPECT_EQ(high_fp, 0u);

  // labels stay inside the complements
  const auto comp_h = as_set(part.complement_history), comp_c = as_set(part.complement_current);
  for (auto id : labels.dynamic) EXPECT_TRUE(comp_h.contains(id));
  for (auto id : labels.mend) EXPECT_TRUE(comp_c.contains(id));
  for (auto id : labels.symmetric) EXPECT_TRUE(comp_c.contains(id));
  // the symmetric pass sees the car's new position
  const auto now = placed_box(m.world.low_dynamic.front(), 2);
  std::size_t sym_car = 0;
  for (auto id : labels.symmetric) sym_car += inside_box(now, m.world_point(m.current, id), 0.1);
  EXPECT_GT(sym_car, 0u);
}

TEST(Detect, SelfComparisonIsEmpty) {
  const auto& m = moved_car();
  for (const Submap* s : {&m.history, &m.current}) {
    const auto part = partition(*s, *s, Pose::identity(), DynamicConfig{});
    const auto labels = detect_dynamics(part, *s, *s, Pose::identity(), DynamicConfig{});
    EXPECT_TRUE(labels.dynamic.empty());
    EXPECT_TRUE(labels.mend.empty());
  }
}

TEST(Detect, MissingOrigins) {
  std::mt19937_64 rng(8);
  Submap s = submap_of(room(rng), Vec3f(0, 0, 1.5));
  PartitionResult part;
  part.complement_current = {0, 1};
  s.cloud.origin_index.clear();
  EXPECT_EQ(error_of([&] { detect_dynamics(part, s, s, Pose::identity(), DynamicConfig{}); }),
            ErrorCode::MissingOrigins);
}

// ---- update -----------------------------------------------------------------

TEST(Update, EmptyLabelsLeaveSubmapUnchanged) {
  const auto& m = moved_car();
  EXPECT_EQ(update_history_submap(m.history, DynamicLabels{}, m.current, m.align), m.history);
}

TEST(Update, CarRemovedAndMended) {
  const auto& m = moved_car();
  const DynamicConfig cfg;
  const auto part = partition(m.current, m.history, m.align, cfg);
  const auto labels = detect_dynamics(part, m.current, m.history, m.align, cfg);
  ASSERT_FALSE(labels.mend.empty());
  const Submap out = update_history_submap(m.history, labels, m.current, m.align);
  out.check_invariants();
  EXPECT_EQ(out.cloud.live_count(), m.history.cloud.live_count() - labels.dynamic.size() + labels.mend.size());
  EXPECT_EQ(out.cloud.size(), m.history.cloud.size() + labels.mend.size());
  for (auto id : labels.dynamic) EXPECT_FALSE(out.cloud.live[id]);
  // mended points sit where the current session saw them
  for (std::size_t i = 0; i < labels.mend.size(); ++i) {
    const Vec3 a = out.origin.apply(Vec3(out.cloud.points[m.history.cloud.size() + i].cast<double>()));
    const Vec3 b = m.world_point(m.current, labels.mend[i]);
    EXPECT_LT((a - b).norm(), 1e-4);
  }
  // and their origins are the current sensor positions
  const std::size_t first = m.history.cloud.size();
  const auto oi = out.cloud.origin_index[first];
  const Vec3 origin_world = out.origin.apply(Vec3(out.scan_origins[oi].cast<double>()));
  const Vec3 expect = m.current.origin.apply(
      Vec3(m.current.scan_origins[m.current.cloud.origin_index[labels.mend[0]]].cast<double>()));
  EXPECT_LT((origin_world - expect).norm(), 1e-4);
  // what remains of the old car is exactly what detection missed
  const auto dyn = as_set(labels.dynamic);
  const auto old = placed_box(m.world.low_dynamic.front(), 1);
  auto on_car = [&](const Vec3& p) { return p.z() > 0.1 && inside_box(old, p, 0.0); };
  std::size_t left = 0, missed = 0, car = 0;
  for (auto id : live_ids(out.cloud)) left += on_car(out.origin.apply(Vec3(out.cloud.points[id].cast<double>())));
  for (auto id : live_ids(m.history.cloud)) {
    if (!on_car(m.world_point(m.history, id))) continue;
    ++car;
    missed += !dyn.contains(id);
  }
  EXPECT_EQ(left, missed);
  EXPECT_LE(double(missed), 0.2 * double(car));
}

TEST(Update, AllDynamicLeavesOnlyMend) {
  const auto& m = moved_car();
  DynamicLabels labels;
  labels.dynamic = live_ids(m.history.cloud);
  labels.mend = {0, 1, 2, 3, 4};
  const Submap out = update_history_submap(m.history, labels, m.current, m.align);
  EXPECT_EQ(out.cloud.live_count(), 5u);
  EXPECT_EQ(live_ids(out.cloud).front(), m.history.cloud.size());
}

TEST(LabeledPly, HeaderAndRecords) {
  PointCloud c;
  c.push_back(Vec3f(1, 2, 3));
  c.push_back(Vec3f(4, 5, 6));
  const std::vector<std::uint8_t> labels{0, 2};
  std::ostringstream out;
  write_labeled_ply(out, c, labels);
  const std::string s = out.str();
  const std::string header =
      "ply\nformat binary_little_endian 1.0\nelement vertex 2\nproperty float x\nproperty float y\nproperty float z\n"
      "property uchar label\nend_header\n";
  ASSERT_EQ(s.substr(0, header.size()), header);
  ASSERT_EQ(s.size(), header.size() + 2 * 13);
  float x;
  std::memcpy(&x, s.data() + header.size() + 13, 4);
  EXPECT_EQ(x, 4.0f);
  EXPECT_EQ(s.back(), '\2');
  const std::vector<std::uint8_t> wrong{0};
  EXPECT_EQ(error_of([&] { write_labeled_ply(out, c, wrong); }), ErrorCode::InvalidConfig);
}
