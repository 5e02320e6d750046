#include "msmap/multi_session.hpp"

#include <algorithm>
#include <set>
#include <utility>

#include "msmap/error.hpp"
#include "msmap/parallel.hpp"

namespace msmap {

namespace {

const Submap* in_session(const SessionGraph& s, const SubmapId& id) { return s.find(id); }

}  // namespace

Pose implied_alignment(const LoopEdge& edge, const PoseGraph& history, const SessionGraph& new_session) {
  if (const Submap* c = in_session(new_session, edge.from)) {
    const auto h = history.vertices.find(edge.to);
    if (h == history.vertices.end()) throw Error(ErrorCode::InvalidConfig, "inter edge endpoint " + to_string(edge.to) + " not in history");
    return h->second * edge.measurement.inverse() * c->origin.inverse();
  }
  if (const Submap* c = in_session(new_session, edge.to)) {
    const auto h = history.vertices.find(edge.from);
    if (h == history.vertices.end()) throw Error(ErrorCode::InvalidConfig, "inter edge endpoint " + to_string(edge.from) + " not in history");
    return h->second * edge.measurement * c->origin.inverse();
  }
  throw Error(ErrorCode::InvalidConfig,
              "inter edge " + to_string(edge.from) + " -> " + to_string(edge.to) + " has no new-session endpoint");
}

OptimizeResult merge_sessions(const PoseGraph& history, const SessionGraph& new_session,
                              std::span<const LoopEdge> inter_edges, const OptimizerConfig& cfg) {
  if (inter_edges.empty()) throw Error(ErrorCode::NoInterEdges, "no inter-session edge for session " + std::to_string(new_session.session));
  if (history.vertices.empty()) throw Error(ErrorCode::InvalidConfig, "empty history graph");
  for (const auto& [id, pose] : history.vertices) {
    if (id.session == new_session.session) {
      throw Error(ErrorCode::InvalidConfig, "session " + std::to_string(id.session) + " already in history");
    }
  }
  for (const auto& e : inter_edges) {
    const bool fc = in_session(new_session, e.from) != nullptr, tc = in_session(new_session, e.to) != nullptr;
    const bool fh = history.vertices.contains(e.from), th = history.vertices.contains(e.to);
    if (!((fc && th) || (tc && fh))) {
      throw Error(ErrorCode::InvalidConfig,
                  "edge " + to_string(e.from) + " -> " + to_string(e.to) + " does not join new session and history");
    }
  }
  const Pose align = implied_alignment(inter_edges.front(), history, new_session);

  PoseGraph g = history;
  g.fixed = {history.vertices.begin()->first};
  for (const auto& s : new_session.submaps) g.vertices[s.id] = align * s.origin;
  g.edges.insert(g.edges.end(), new_session.odometry_edges.begin(), new_session.odometry_edges.end());
  g.edges.insert(g.edges.end(), new_session.loop_edges.begin(), new_session.loop_edges.end());
  g.edges.insert(g.edges.end(), inter_edges.begin(), inter_edges.end());
  return optimize(g, cfg);
}

const Submap* MultiSessionMap::find(const SubmapId& id) const {
  for (const auto& s : sessions) {
    if (const Submap* m = s.find(id)) return m;
  }
  return nullptr;
}

Submap* MultiSessionMap::find(const SubmapId& id) {
  return const_cast<Submap*>(std::as_const(*this).find(id));
}

std::map<SubmapId, const Submap*> MultiSessionMap::submap_index() const {
  std::map<SubmapId, const Submap*> out;
  for (const auto& s : sessions) {
    for (const auto& m : s.submaps) out.emplace(m.id, &m);
  }
  return out;
}

PoseGraph MultiSessionMap::pose_graph() const {
  PoseGraph g;
  for (const auto& s : sessions) {
    const PoseGraph sg = s.pose_graph();
    g.vertices.insert(sg.vertices.begin(), sg.vertices.end());
    g.edges.insert(g.edges.end(), sg.edges.begin(), sg.edges.end());
  }
  g.edges.insert(g.edges.end(), inter_edges.begin(), inter_edges.end());
  if (!g.vertices.empty()) g.fixed.insert(g.vertices.begin()->first);
  return g;
}

void MultiSessionMap::apply(const PoseGraph& graph) {
  for (auto& s : sessions) s.apply(graph);
}

void MergeConfig::validate() const {
  vote.validate();
  loop.validate();
  if (yaw_seeds < 1) throw Error(ErrorCode::InvalidConfig, "yaw_seeds must be >= 1");
}

std::vector<LoopCandidate> recheck_candidates(const MultiSessionMap& map, std::uint32_t new_session, double radius) {
  std::set<std::pair<SubmapId, SubmapId>> joined;
  for (const auto& e : map.inter_edges) {
    joined.emplace(e.from, e.to);
    joined.emplace(e.to, e.from);
  }
  std::vector<LoopCandidate> out;
  const SessionGraph* cur = nullptr;
  for (const auto& s : map.sessions) {
    if (s.session == new_session) cur = &s;
  }
  if (!cur) return out;
  for (const auto& c : cur->submaps) {
    for (const auto& s : map.sessions) {
      if (s.session == new_session) continue;
      for (const auto& h : s.submaps) {
        if (joined.contains({c.id, h.id})) continue;
        if ((c.origin.translation() - h.origin.translation()).norm() < radius) {
          out.push_back({c.id, h.id, relative(c.origin, h.origin), CandidateSource::Recheck, {}});
        }
      }
    }
  }
  return out;
}

namespace {

using PreparedCache = std::map<SubmapId, PreparedSubmap>;

void prepare_all(PreparedCache& cache, const MultiSessionMap& map, std::span<const LoopCandidate> cands,
                 const LoopClosureConfig& cfg) {
  std::vector<SubmapId> need;
  for (const auto& c : cands) {
    for (const SubmapId& id : {c.current, c.history}) {
      if (!cache.contains(id) && std::find(need.begin(), need.end(), id) == need.end()) need.push_back(id);
    }
  }
  std::vector<PreparedSubmap> built(need.size());
  parallel_for(need.size(), [&](std::size_t i) {
    const Submap* s = map.find(need[i]);
    if (!s) throw Error(ErrorCode::InvalidConfig, "unknown submap " + to_string(need[i]));
    built[i] = prepare_submap(*s, cfg);
  });
  for (std::size_t i = 0; i < need.size(); ++i) cache.emplace(need[i], std::move(built[i]));
}

std::vector<ValidationResult> validate_all(const PreparedCache& cache, std::span<const LoopCandidate> cands,
                                           const LoopClosureConfig& cfg) {
  std::vector<ValidationResult> out(cands.size());
  parallel_for(cands.size(), [&](std::size_t i) {
    out[i] = validate_candidate(cands[i], cache.at(cands[i].current), cache.at(cands[i].history), cfg);
  });
  return out;
}

}  // namespace

MergeReport merge_new_session(MultiSessionMap& map, SignatureDatabase& db, const SessionGraph& new_session,
                              std::span<const Scan> scans, const MergeConfig& cfg) {
  const auto sigs = session_signatures(new_session, scans, db.config());
  return merge_new_session(map, db, new_session, std::span<const PlaceSignature>(sigs), cfg);
}

MergeReport merge_new_session(MultiSessionMap& map, SignatureDatabase& db, const SessionGraph& new_session,
                              std::span<const PlaceSignature> signatures, const MergeConfig& cfg) {
  cfg.validate();
  for (const auto& s : map.sessions) {
    if (s.session == new_session.session) {
      throw Error(ErrorCode::InvalidConfig, "session " + std::to_string(s.session) + " already merged");
    }
  }
  if (map.sessions.empty()) throw Error(ErrorCode::InvalidConfig, "no history session to merge into");

  MergeReport report;
  report.match = match_new_session(db, new_session, signatures, cfg.vote, map.submap_index(), cfg.yaw_seeds);

  MultiSessionMap merged = map;
  merged.sessions.push_back(new_session);
  PreparedCache cache;
  prepare_all(cache, merged, report.match.candidates, cfg.loop);
  report.validations = validate_all(cache, report.match.candidates, cfg.loop);
  for (const auto& r : report.validations) {
    if (r.edge) report.inter_edges.push_back(*r.edge);
  }

  merged.sessions.pop_back();
  report.optimization = merge_sessions(merged.pose_graph(), new_session, report.inter_edges, cfg.optimizer);
  merged.sessions.push_back(new_session);
  merged.inter_edges.insert(merged.inter_edges.end(), report.inter_edges.begin(), report.inter_edges.end());
  merged.apply(report.optimization.graph);

  if (cfg.recheck) {
    // prepared inputs are submap-local and survive the origin update
    report.recheck_candidates = recheck_candidates(merged, new_session.session, cfg.loop.proximity_radius);
    prepare_all(cache, merged, report.recheck_candidates, cfg.loop);
    report.recheck_validations = validate_all(cache, report.recheck_candidates, cfg.loop);
    bool added = false;
    for (const auto& r : report.recheck_validations) {
      if (!r.edge) continue;
      merged.inter_edges.push_back(*r.edge);
      report.inter_edges.push_back(*r.edge);
      added = true;
    }
    if (added) {
      report.optimization = optimize(merged.pose_graph(), cfg.optimizer);
      merged.apply(report.optimization.graph);
    }
  }

  db.insert(signatures);
  map = std::move(merged);
  return report;
}

}  // namespace msmap
