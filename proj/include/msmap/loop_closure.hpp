#pragma once

#include <functional>
#include <iosfwd>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "msmap/place_descriptor.hpp"
#include "msmap/pose_graph.hpp"
#include "msmap/registration.hpp"
#include "msmap/submap.hpp"

namespace msmap {

struct LoopClosureConfig {
  double proximity_radius = 30.0;
  std::uint32_t min_index_gap = 2;  // same-session candidates must be this far apart
  IcpConfig icp;
  double min_overlap = 0.5;  // measured at icp.overlap_distance
  double max_prior_translation = 3.0;
  double max_prior_rotation = 0.3;
  int prior_yaw_seeds = 4;   // prior plus yaw variants
  int blind_yaw_seeds = 12;  // seeds per colocation hypothesis without prior
  double source_voxel = 0.4;
  std::size_t normal_k = 10;
  /// Loop-edge information: translation sigma max(rms, sigma_floor), rotation
  /// sigma a fifth of it (rad per meter).
  double sigma_floor = 0.02;

  void validate() const;
};

enum class CandidateSource { Proximity, Voting, Recheck };
std::string_view to_string(CandidateSource s);

struct LoopCandidate {
  SubmapId current;
  SubmapId history;
  /// relative(x_current, x_history) from current pose estimates.
  std::optional<Pose> prior;
  CandidateSource source = CandidateSource::Proximity;
  /// Extra ICP seeds (measurement hypotheses), used when no prior exists.
  std::vector<Pose> seeds;
};

/// Same-session submaps at least `min_index_gap` indices before `new_index`
/// whose origins lie within `radius` of the new origin.
std::vector<LoopCandidate> proximity_candidates(const SessionGraph& session, std::uint32_t new_index, double radius,
                                                std::uint32_t min_index_gap = 2);

/// Registration inputs derived once per submap: a downsampled source and a
/// normal-carrying target, both in the submap frame over live points.
struct PreparedSubmap {
  SubmapId id;
  PointCloud source;
  std::shared_ptr<const RegistrationTarget> target;
};
PreparedSubmap prepare_submap(const Submap& submap, const LoopClosureConfig& cfg);

struct ValidationResult {
  std::optional<LoopEdge> edge;
  IcpResult icp;
  bool registered = false;
  std::string reason;  // empty when accepted
};

/// Registers history onto current. An accepted edge runs from the current to
/// the history submap with measurement relative(x_current, x_history).
ValidationResult validate_candidate(const LoopCandidate& cand, const PreparedSubmap& current,
                                    const PreparedSubmap& history, const LoopClosureConfig& cfg);

/// Loop-edge information scaled by the ICP residual.
Mat6 loop_information(double rms_residual, const LoopClosureConfig& cfg);

// ---- voting -----------------------------------------------------------------

struct ScanPairing {
  std::uint32_t current_scan = 0;
  PlaceKey history;
  double distance = 0.0;
};

struct SubmapMatchTally {
  SubmapId submap;
  std::map<SubmapId, std::uint32_t> votes;
  std::uint32_t failed = 0;
  std::uint32_t total_scans = 0;
  /// Closest descriptor pairing per voted history submap.
  std::map<SubmapId, ScanPairing> best_pair;
};

struct VoteConfig {
  double gamma = 0.95;
  std::uint32_t n = 3;
  /// Divide by all scans, failures included, instead of voted scans only.
  bool strict_denominator = false;

  void validate() const;
};

enum class VerdictKind { Matched, Undefined };
std::string_view to_string(VerdictKind k);

struct Verdict {
  SubmapId submap;
  VerdictKind kind = VerdictKind::Undefined;
  std::vector<SubmapId> matched;
  /// Proportion per voted history submap, ordered by vote count then id.
  std::vector<std::pair<SubmapId, double>> proportions;
  int rule = 0;  // 1 all failed, 2 single majority, 3 top-n neighbors, 0 none fired
};

using NeighborFn = std::function<bool(const SubmapId&, const SubmapId&)>;
/// Same session and consecutive indices.
bool consecutive_submaps(const SubmapId& a, const SubmapId& b);

Verdict vote_submap(const SubmapMatchTally& tally, const VoteConfig& cfg, const NeighborFn& neighbors = consecutive_submaps);

struct SessionMatch {
  std::vector<SubmapMatchTally> tallies;
  std::vector<Verdict> verdicts;
  std::vector<LoopCandidate> candidates;
};

/// Optional current global pose of any submap; enables candidate priors.
using GlobalPoseFn = std::function<std::optional<Pose>(const SubmapId&)>;

/// Queries every scan of every new submap against `db`, tallies votes and
/// votes. Each matched history submap yields one candidate; without a
/// prior, seeds come from its best scan pairing (see pairing_seeds).
SessionMatch match_new_session(const SignatureDatabase& db, const SessionGraph& new_session, std::span<const Scan> scans,
                               const VoteConfig& cfg, const std::map<SubmapId, const Submap*>& history_submaps,
                               int yaw_seeds = 12, const GlobalPoseFn& global_pose = {});
/// Same with precomputed signatures, matched to scans by `key.scan`.
SessionMatch match_new_session(const SignatureDatabase& db, const SessionGraph& new_session,
                               std::span<const PlaceSignature> signatures, const VoteConfig& cfg,
                               const std::map<SubmapId, const Submap*>& history_submaps, int yaw_seeds = 12,
                               const GlobalPoseFn& global_pose = {});

/// Measurement hypotheses relative(x_current, x_history) assuming the two
/// paired scans were taken at the same place, one per yaw offset.
std::vector<Pose> pairing_seeds(const Pose& current_scan_pose, const Pose& history_scan_pose, int yaw_count);

/// One line per submap: id, verdict, matched ids, proportions.
std::string verdict_report(std::span<const Verdict> verdicts);
/// Reads a verdict report back; proportions keep the printed 6 decimals.
/// Throws ParseError naming the line.
std::vector<Verdict> parse_verdict_report(std::istream& in);

}  // namespace msmap
