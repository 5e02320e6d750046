#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <vector>

#include "msmap/loop_closure.hpp"
#include "msmap/place_descriptor.hpp"
#include "msmap/pose_graph.hpp"
#include "msmap/submap.hpp"

namespace msmap {

/// Joint graph over the history vertices and the new session's origins.
/// The new session is brought into the history frame through the first
/// inter edge, then everything except the smallest history vertex is
/// optimized. Throws NoInterEdges, and InvalidConfig when an inter edge does
/// not join a new-session vertex to a history vertex.
OptimizeResult merge_sessions(const PoseGraph& history, const SessionGraph& new_session,
                              std::span<const LoopEdge> inter_edges, const OptimizerConfig& cfg = {});

/// Transform taking new-session frame coordinates into the history frame,
/// implied by one inter edge and the current origin estimates.
Pose implied_alignment(const LoopEdge& edge, const PoseGraph& history, const SessionGraph& new_session);

/// Submaps of every session, origins expressed in the frame of the first
/// session's first submap.
struct MultiSessionMap {
  std::vector<SessionGraph> sessions;
  std::vector<LoopEdge> inter_edges;

  const Submap* find(const SubmapId& id) const;
  Submap* find(const SubmapId& id);
  std::map<SubmapId, const Submap*> submap_index() const;
  PoseGraph pose_graph() const;
  void apply(const PoseGraph& graph);
};

struct MergeConfig {
  VoteConfig vote;
  LoopClosureConfig loop;
  OptimizerConfig optimizer;
  int yaw_seeds = 12;
  bool recheck = true;

  void validate() const;
};

struct MergeReport {
  SessionMatch match;
  std::vector<ValidationResult> validations;  // one per match candidate
  std::vector<LoopEdge> inter_edges;
  std::vector<LoopCandidate> recheck_candidates;
  std::vector<ValidationResult> recheck_validations;
  OptimizeResult optimization;
};

/// Cross-session proximity candidates under the current merged poses:
/// every pair (new-session submap, other-session submap) whose origins lie
/// within `radius` and that no existing edge already joins.
std::vector<LoopCandidate> recheck_candidates(const MultiSessionMap& map, std::uint32_t new_session, double radius);

/// Place recognition, voting, validation, joint optimization and the
/// proximity re-check for one new session. On success the session is
/// appended to `map` with merged origins and `db` gains its signatures.
/// Throws NoInterEdges when nothing validates; `map` and `db` are then left
/// untouched.
MergeReport merge_new_session(MultiSessionMap& map, SignatureDatabase& db, const SessionGraph& new_session,
                              std::span<const Scan> scans, const MergeConfig& cfg);
/// Same with the new session's precomputed signatures.
MergeReport merge_new_session(MultiSessionMap& map, SignatureDatabase& db, const SessionGraph& new_session,
                              std::span<const PlaceSignature> signatures, const MergeConfig& cfg);

}  // namespace msmap
