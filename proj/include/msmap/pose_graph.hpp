#pragma once

#include <compare>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "msmap/pose.hpp"

namespace msmap {

/// Identifies a submap (and its origin vertex) across sessions.
struct SubmapId {
  std::uint32_t session = 0;
  std::uint32_t index = 0;
  auto operator<=>(const SubmapId&) const = default;
};

std::string to_string(const SubmapId& id);
/// Parses the "session:index" form produced by to_string. Throws ParseError.
SubmapId parse_submap_id(const std::string& text);

enum class EdgeKind { Odometry, IntraLoop, InterLoop };
std::string_view to_string(EdgeKind kind);
EdgeKind parse_edge_kind(std::string_view text);

/// Relative-pose measurement between two submap origins.
struct LoopEdge {
  SubmapId from;
  SubmapId to;
  Pose measurement;  // expected relative(pose_from, pose_to)
  Mat6 information = Mat6::Identity();
  EdgeKind kind = EdgeKind::Odometry;
  bool operator==(const LoopEdge&) const = default;
};

/// Diagonal information with separate translation and rotation sigmas.
Mat6 diagonal_information(double sigma_translation, double sigma_rotation);

struct PoseGraph {
  std::map<SubmapId, Pose> vertices;
  std::vector<LoopEdge> edges;
  std::set<SubmapId> fixed;
};

/// log_map(relative(measurement, relative(pose_from, pose_to))).
Vec6 residual(const LoopEdge& edge, const PoseGraph& graph);
Vec6 residual(const LoopEdge& edge, const Pose& from, const Pose& to);

/// Residual Jacobians with respect to left increments exp(d) * pose of the
/// `from` and `to` vertices, increments ordered (translation, rotation).
struct EdgeJacobians {
  Eigen::Matrix<double, 6, 6> from;
  Eigen::Matrix<double, 6, 6> to;
};
EdgeJacobians residual_jacobians(const LoopEdge& edge, const Pose& from, const Pose& to);

/// Huber weight for squared Mahalanobis norm `s`: 1 inside delta^2,
/// delta / sqrt(s) outside.
double robust_weight(double squared_mahalanobis, double delta);
/// Huber loss matching robust_weight as its derivative.
double robust_cost(double squared_mahalanobis, double delta);

struct OptimizerConfig {
  int max_iterations = 100;
  double lambda_init = 1e-4;
  double huber_delta = 1.0;
  double relative_tolerance = 1e-9;
};

struct OptimizeResult {
  PoseGraph graph;
  /// Robust cost before optimization and after every accepted step.
  std::vector<double> cost_trace;
  int iterations = 0;
};

double total_cost(const PoseGraph& graph, double huber_delta);

/// Levenberg-Marquardt over all non-fixed vertices. Throws NotConnected when
/// nothing is fixed or a vertex is unreachable from the fixed set, and
/// SingularSystem when the damped normal equations cannot be factored.
OptimizeResult optimize(const PoseGraph& graph, const OptimizerConfig& cfg = {});

/// Throws NotConnected; also rejects edges with unknown endpoints.
void check_connected(const PoseGraph& graph);

}  // namespace msmap
