#include "msmap/pose_graph.hpp"

#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>
#include <cmath>
#include <deque>
#include <limits>

#include "msmap/error.hpp"

namespace msmap {

std::string to_string(const SubmapId& id) {
  return std::to_string(id.session) + ":" + std::to_string(id.index);
}

SubmapId parse_submap_id(const std::string& text) {
  const auto colon = text.find(':');
  if (colon == std::string::npos) throw Error(ErrorCode::ParseError, "bad submap id '" + text + "'");
  try {
    std::size_t used_a = 0, used_b = 0;
    const auto session = std::stoul(text.substr(0, colon), &used_a);
    const auto index = std::stoul(text.substr(colon + 1), &used_b);
    if (used_a != colon || used_b != text.size() - colon - 1) throw std::invalid_argument("trailing");
    return {static_cast<std::uint32_t>(session), static_cast<std::uint32_t>(index)};
  } catch (const std::exception&) {
    throw Error(ErrorCode::ParseError, "bad submap id '" + text + "'");
  }
}

std::string_view to_string(EdgeKind kind) {
  switch (kind) {
    case EdgeKind::Odometry: return "odometry";
    case EdgeKind::IntraLoop: return "intra_loop";
    case EdgeKind::InterLoop: return "inter_loop";
  }
  return "odometry";
}

EdgeKind parse_edge_kind(std::string_view text) {
  if (text == "odometry") return EdgeKind::Odometry;
  if (text == "intra_loop") return EdgeKind::IntraLoop;
  if (text == "inter_loop") return EdgeKind::InterLoop;
  throw Error(ErrorCode::ParseError, "unknown edge kind '" + std::string(text) + "'");
}

Mat6 diagonal_information(double sigma_translation, double sigma_rotation) {
  Mat6 info = Mat6::Zero();
  info.diagonal().head<3>().setConstant(1.0 / (sigma_translation * sigma_translation));
  info.diagonal().tail<3>().setConstant(1.0 / (sigma_rotation * sigma_rotation));
  return info;
}

Vec6 residual(const LoopEdge& edge, const Pose& from, const Pose& to) {
  return log_map(relative(edge.measurement, relative(from, to)));
}

Vec6 residual(const LoopEdge& edge, const PoseGraph& graph) {
  return residual(edge, graph.vertices.at(edge.from), graph.vertices.at(edge.to));
}

EdgeJacobians residual_jacobians(const LoopEdge& edge, const Pose& from, const Pose& to) {
  const Vec6 r = residual(edge, from, to);
  const Mat3 a = edge.measurement.rotation_matrix().transpose() * from.rotation_matrix().transpose();
  const Mat3 jl_inv = so3_left_jacobian_inverse(r.tail<3>());
  const Mat3 tj = skew(to.translation());

  EdgeJacobians j;
  j.to.setZero();
  j.to.topLeftCorner<3, 3>() = a;
  j.to.topRightCorner<3, 3>() = -a * tj;
  j.to.bottomRightCorner<3, 3>() = jl_inv * a;

  j.from.setZero();
  j.from.topLeftCorner<3, 3>() = -a;
  j.from.topRightCorner<3, 3>() = a * tj;
  j.from.bottomRightCorner<3, 3>() = -jl_inv * a;
  return j;
}

double robust_weight(double s, double delta) {
  if (s <= delta * delta) return 1.0;
  return delta / std::sqrt(s);
}

double robust_cost(double s, double delta) {
  if (s <= delta * delta) return s;
  return 2.0 * delta * std::sqrt(s) - delta * delta;
}

double total_cost(const PoseGraph& graph, double huber_delta) {
  double cost = 0.0;
  for (const auto& e : graph.edges) {
    const Vec6 r = residual(e, graph);
    cost += robust_cost(r.dot(e.information * r), huber_delta);
  }
  return cost;
}

void check_connected(const PoseGraph& graph) {
  if (graph.fixed.empty()) throw Error(ErrorCode::NotConnected, "no fixed vertex: gauge freedom is unresolved");
  std::map<SubmapId, std::vector<SubmapId>> adjacency;
  for (const auto& e : graph.edges) {
    if (!graph.vertices.contains(e.from) || !graph.vertices.contains(e.to)) {
      throw Error(ErrorCode::NotConnected, "edge references unknown vertex " + to_string(e.from) + " -> " +
                                               to_string(e.to));
    }
    adjacency[e.from].push_back(e.to);
    adjacency[e.to].push_back(e.from);
  }
  std::set<SubmapId> seen;
  std::deque<SubmapId> queue;
  for (const auto& f : graph.fixed) {
    if (!graph.vertices.contains(f)) throw Error(ErrorCode::NotConnected, "fixed vertex " + to_string(f) + " missing");
    if (seen.insert(f).second) queue.push_back(f);
  }
  while (!queue.empty()) {
    const SubmapId v = queue.front();
    queue.pop_front();
    for (const auto& n : adjacency[v]) {
      if (seen.insert(n).second) queue.push_back(n);
    }
  }
  for (const auto& [id, pose] : graph.vertices) {
    if (!seen.contains(id)) throw Error(ErrorCode::NotConnected, "vertex " + to_string(id) + " unreachable from fixed set");
  }
}

OptimizeResult optimize(const PoseGraph& graph, const OptimizerConfig& cfg) {
  check_connected(graph);

  OptimizeResult result{graph, {}, 0};
  PoseGraph& g = result.graph;

  std::map<SubmapId, int> slot;
  for (const auto& [id, pose] : g.vertices) {
    if (!g.fixed.contains(id)) slot.emplace(id, static_cast<int>(slot.size()));
  }
  const int n = static_cast<int>(slot.size()) * 6;

  double cost = total_cost(g, cfg.huber_delta);
  result.cost_trace.push_back(cost);
  if (n == 0 || cost == 0.0) return result;

  double lambda = cfg.lambda_init;
  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> solver;
  bool pattern_ready = false;

  for (int it = 0; it < cfg.max_iterations; ++it) {
    std::vector<Eigen::Triplet<double>> triplets;
    Eigen::VectorXd b = Eigen::VectorXd::Zero(n);
    auto add_block = [&](int r, int c, const Mat6& m) {
      for (int i = 0; i < 6; ++i)
        for (int j = 0; j < 6; ++j) triplets.emplace_back(r + i, c + j, m(i, j));
    };
    for (const auto& e : g.edges) {
      const Pose& from = g.vertices.at(e.from);
      const Pose& to = g.vertices.at(e.to);
      const Vec6 r = residual(e, from, to);
      const double w = robust_weight(r.dot(e.information * r), cfg.huber_delta);
      const EdgeJacobians jac = residual_jacobians(e, from, to);
      const Mat6 wi = w * e.information;
      const auto si = slot.find(e.from);
      const auto sj = slot.find(e.to);
      if (si != slot.end()) {
        add_block(si->second * 6, si->second * 6, jac.from.transpose() * wi * jac.from);
        b.segment<6>(si->second * 6) += jac.from.transpose() * wi * r;
      }
      if (sj != slot.end()) {
        add_block(sj->second * 6, sj->second * 6, jac.to.transpose() * wi * jac.to);
        b.segment<6>(sj->second * 6) += jac.to.transpose() * wi * r;
      }
      if (si != slot.end() && sj != slot.end()) {
        const Mat6 cross = jac.from.transpose() * wi * jac.to;
        add_block(si->second * 6, sj->second * 6, cross);
        add_block(sj->second * 6, si->second * 6, cross.transpose());
      }
    }
    Eigen::SparseMatrix<double> h(n, n);
    h.setFromTriplets(triplets.begin(), triplets.end());
    if (!pattern_ready) {
      Eigen::SparseMatrix<double> pattern = h;
      for (int i = 0; i < n; ++i) pattern.coeffRef(i, i) += 1.0;
      solver.analyzePattern(pattern);
      pattern_ready = true;
    }

    bool accepted = false;
    while (!accepted) {
      Eigen::SparseMatrix<double> damped = h;
      for (int i = 0; i < n; ++i) damped.coeffRef(i, i) += lambda;
      solver.factorize(damped);
      if (solver.info() != Eigen::Success) {
        lambda *= 10.0;
        if (lambda > 1e12) throw Error(ErrorCode::SingularSystem, "damped normal equations are not factorable");
        continue;
      }
      const Eigen::VectorXd delta = -solver.solve(b);
      if (!delta.allFinite()) throw Error(ErrorCode::SingularSystem, "non-finite increment");

      PoseGraph trial = g;
      for (const auto& [id, s] : slot) {
        trial.vertices[id] = compose(exp_map(delta.segment<6>(s * 6)), trial.vertices[id]);
      }
      double trial_cost = std::numeric_limits<double>::infinity();
      try {
        trial_cost = total_cost(trial, cfg.huber_delta);
      } catch (const Error&) {
        // a residual reached the log singularity; treat as a rejected step
      }
      if (trial_cost < cost) {
        const double change = (cost - trial_cost) / cost;
        g = std::move(trial);
        cost = trial_cost;
        result.cost_trace.push_back(cost);
        lambda = std::max(lambda * 0.5, 1e-12);
        accepted = true;
        result.iterations = it + 1;
        if (change < cfg.relative_tolerance || cost == 0.0) return result;
      } else {
        lambda *= 10.0;
        if (lambda > 1e12) return result;  // no further decrease possible
      }
    }
  }
  return result;
}

}  // namespace msmap
