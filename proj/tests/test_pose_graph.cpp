#include <gtest/gtest.h>

#include <Eigen/Dense>

#include "msmap/pose_graph.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace msmap;
using namespace msmap::testing;

namespace {

SubmapId v(std::uint32_t i) { return {1, i}; }

LoopEdge edge(std::uint32_t a, std::uint32_t b, const Pose& z, EdgeKind kind = EdgeKind::Odometry) {
  return {v(a), v(b), z, diagonal_information(0.05, 0.01), kind};
}

// Loop-edge disagreement scaled by `severity`; at 1 every edge sits in the
// linear Huber zone, at 0.05 all stay quadratic.
PoseGraph triangle_with_contradiction(double severity = 1.0) {
  PoseGraph g;
  g.vertices[v(0)] = Pose::identity();
  g.vertices[v(1)] = Pose::from_yaw(0.3, Vec3(5, 0, 0));
  g.vertices[v(2)] = Pose::from_yaw(0.6, Vec3(9, 2.5, 0.1));
  g.edges.push_back(edge(0, 1, Pose::from_yaw(0.3, Vec3(5, 0, 0))));
  g.edges.push_back(edge(1, 2, Pose::from_yaw(0.3, Vec3(4.8, 1.2, 0.0))));
  const Pose consistent = g.edges[0].measurement * g.edges[1].measurement;
  const Pose off = exp_map(severity * (Vec6() << 0.4, 0.3, -0.05, 0.0, 0.0, -0.05).finished());
  g.edges.push_back(edge(0, 2, off * consistent, EdgeKind::IntraLoop));
  g.fixed.insert(v(0));
  return g;
}

}  // namespace

TEST(Residual, ZeroWhenConsistent) {
  std::mt19937_64 rng(21);
  const Pose a = random_pose(rng, 2.0, 10), b = random_pose(rng, 2.0, 10);
  const LoopEdge e = edge(0, 1, relative(a, b));
  EXPECT_LT(residual(e, a, b).norm(), 1e-12);
}

TEST(Residual, LinearTranslationCase) {
  const LoopEdge e = edge(0, 1, Pose::from_translation(Vec3(1, 0, 0)));
  const Vec6 r = residual(e, Pose::identity(), Pose::from_translation(Vec3(1.1, 0, 0)));
  EXPECT_NEAR(r(0), 0.1, 1e-9);
  EXPECT_NEAR(r.tail<5>().norm(), 0.0, 1e-12);
}

TEST(Residual, MatchesMatrixOracle) {
  std::mt19937_64 rng(22);
  for (int i = 0; i < 100; ++i) {
    const Pose a = random_pose(rng, 3.0, 10), b = random_pose(rng, 3.0, 10);
    const Pose z = compose(relative(a, b), random_pose(rng, 1.0, 1.0));
    const LoopEdge e = edge(0, 1, z);
    const Eigen::Matrix4d err = z.matrix().inverse() * a.matrix().inverse() * b.matrix();
    const auto expect = ReferenceSolver::from_matrix(err);
    EXPECT_LT((residual(e, a, b) - expect).norm(), 1e-9);
  }
}

TEST(Residual, JacobiansMatchCentralDifferences) {
  std::mt19937_64 rng(23);
  double worst = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    const Pose a = random_pose(rng, 3.0, 10), b = random_pose(rng, 3.0, 10);
    const Pose z = compose(relative(a, b), random_pose(rng, 1.2, 2.0));
    const LoopEdge e = edge(0, 1, z);
    const EdgeJacobians j = residual_jacobians(e, a, b);
    const double h = 1e-6;
    Mat6 num_from, num_to;
    for (int k = 0; k < 6; ++k) {
      Vec6 d = Vec6::Zero();
      d(k) = h;
      num_from.col(k) = (residual(e, exp_map(d) * a, b) - residual(e, exp_map(-d) * a, b)) / (2 * h);
      num_to.col(k) = (residual(e, a, exp_map(d) * b) - residual(e, a, exp_map(-d) * b)) / (2 * h);
    }
    const double scale = 1.0 + std::max(num_from.cwiseAbs().maxCoeff(), num_to.cwiseAbs().maxCoeff());
    worst = std::max(worst, (num_from - j.from).cwiseAbs().maxCoeff() / scale);
    worst = std::max(worst, (num_to - j.to).cwiseAbs().maxCoeff() / scale);
  }
  EXPECT_LT(worst, 1e-5);
}

TEST(Robust, HuberWeight) {
  EXPECT_DOUBLE_EQ(robust_weight(0.0, 1.0), 1.0);
  EXPECT_DOUBLE_EQ(robust_weight(1.0, 1.0), 1.0);
  EXPECT_DOUBLE_EQ(robust_weight(4.0, 1.0), 0.5);
  EXPECT_DOUBLE_EQ(robust_weight(4.0 * 9.0, 3.0), 0.5);
  // weight is the derivative of the cost with respect to s, times 1/(d/ds s)
  for (double s : {0.5, 2.0, 10.0}) {
    const double h = 1e-6;
    EXPECT_NEAR((robust_cost(s + h, 1.0) - robust_cost(s - h, 1.0)) / (2 * h), robust_weight(s, 1.0), 1e-6);
  }
}

TEST(Optimize, ConsistentGraphStaysPut) {
  PoseGraph g;
  g.vertices[v(0)] = Pose::identity();
  g.vertices[v(1)] = Pose::from_translation(Vec3(1, 0, 0));
  g.edges.push_back(edge(0, 1, Pose::from_translation(Vec3(1, 0, 0))));
  g.fixed.insert(v(0));
  const auto r = optimize(g);
  EXPECT_EQ(r.iterations, 0);
  EXPECT_EQ(r.cost_trace, std::vector<double>{0.0});
  EXPECT_EQ(r.graph.vertices.at(v(1)).matrix(), g.vertices.at(v(1)).matrix());
}

TEST(Optimize, MatchesReferenceSolver) {
  const PoseGraph g = triangle_with_contradiction();
  const auto r = optimize(g);
  ReferenceSolver ref{g};
  const double expected = ref.solve();
  EXPECT_GT(expected, 0.0);
  EXPECT_NEAR(r.cost_trace.back(), expected, 1e-6 * expected);
  for (std::size_t i = 1; i < r.cost_trace.size(); ++i) EXPECT_LT(r.cost_trace[i], r.cost_trace[i - 1]);
  EXPECT_EQ(r.graph.vertices.at(v(0)).matrix(), g.vertices.at(v(0)).matrix());
}

TEST(Optimize, NoFixedVertexOrDisconnected) {
  PoseGraph g = triangle_with_contradiction();
  g.fixed.clear();
  EXPECT_EQ(error_of([&] { optimize(g); }), ErrorCode::NotConnected);
  g = triangle_with_contradiction();
  g.vertices[v(9)] = Pose::identity();
  EXPECT_EQ(error_of([&] { optimize(g); }), ErrorCode::NotConnected);
}

TEST(Optimize, GaugeInvariance) {
  // a mild contradiction keeps the minimum isolated (the linear Huber zone
  // has flat directions)
  const PoseGraph g = triangle_with_contradiction(0.05);
  std::mt19937_64 rng(24);
  const Pose t = random_pose(rng, 1.0, 20);
  PoseGraph moved = g;
  for (auto& [id, p] : moved.vertices) p = t * p;
  const auto a = optimize(g).graph;
  const auto b = optimize(moved).graph;
  for (auto [i, j] : {std::pair{0u, 1u}, {1u, 2u}, {0u, 2u}}) {
    const auto d = pose_delta(relative(a.vertices.at(v(i)), a.vertices.at(v(j))),
                              relative(b.vertices.at(v(i)), b.vertices.at(v(j))));
    EXPECT_LT(d.translation, 1e-6);
    EXPECT_LT(d.rotation, 1e-6);
  }
}

TEST(Optimize, RobustKernelBoundsOutlier) {
  std::mt19937_64 rng(25);
  PoseGraph g;
  std::vector<Pose> truth;
  for (std::uint32_t i = 0; i < 10; ++i) {
    truth.push_back(Pose::from_yaw(0.1 * i, Vec3(5.0 * i, 0.3 * i * i, 0)));
    g.vertices[v(i)] = truth.back();
  }
  for (std::uint32_t i = 0; i + 1 < 10; ++i) g.edges.push_back(edge(i, i + 1, relative(truth[i], truth[i + 1])));
  std::uniform_int_distribution<std::uint32_t> pick(0, 9);
  while (g.edges.size() < 20) {
    const auto a = pick(rng), b = pick(rng);
    if (a + 1 >= b) continue;
    g.edges.push_back(edge(a, b, relative(truth[a], truth[b]), EdgeKind::IntraLoop));
  }
  g.fixed.insert(v(0));
  // start from a perturbed state so the solver has work to do
  for (std::uint32_t i = 1; i < 10; ++i) g.vertices[v(i)] = random_pose(rng, 0.02, 0.3) * truth[i];
  PoseGraph bad = g;
  bad.edges.push_back(edge(2, 7, Pose::from_translation(Vec3(10, 0, 0)) * relative(truth[2], truth[7]),
                           EdgeKind::IntraLoop));
  const auto clean = optimize(g).graph;
  const auto robust = optimize(bad).graph;
  for (std::uint32_t i = 0; i < 10; ++i) {
    EXPECT_LT((clean.vertices.at(v(i)).translation() - robust.vertices.at(v(i)).translation()).norm(), 0.05) << i;
  }
}

TEST(Ids, ParseAndFormat) {
  EXPECT_EQ(to_string(SubmapId{3, 17}), "3:17");
  EXPECT_EQ(parse_submap_id("3:17"), (SubmapId{3, 17}));
  EXPECT_EQ(error_of([] { parse_submap_id("3-17"); }), ErrorCode::ParseError);
  EXPECT_EQ(parse_edge_kind("inter_loop"), EdgeKind::InterLoop);
}
