#include "msmap/loop_closure.hpp"

#include <algorithm>
#include <cstdio>
#include <deque>
#include <numbers>
#include <set>
#include <sstream>

#include "msmap/error.hpp"

namespace msmap {

void LoopClosureConfig::validate() const {
  icp.validate();
  if (!(proximity_radius > 0.0)) throw Error(ErrorCode::InvalidConfig, "proximity radius must be positive");
  if (!(min_overlap >= 0.0 && min_overlap <= 1.0)) throw Error(ErrorCode::InvalidConfig, "min_overlap outside [0,1]");
  if (!(source_voxel > 0.0) || !(sigma_floor > 0.0)) throw Error(ErrorCode::InvalidConfig, "loop voxel/sigma must be positive");
  if (prior_yaw_seeds < 1 || blind_yaw_seeds < 1) throw Error(ErrorCode::InvalidConfig, "yaw seed counts must be >= 1");
}

void VoteConfig::validate() const {
  if (!(gamma > 0.0 && gamma <= 1.0)) throw Error(ErrorCode::InvalidConfig, "gamma must lie in (0, 1]");
  if (n < 1) throw Error(ErrorCode::InvalidConfig, "n must be >= 1");
}

std::string_view to_string(CandidateSource s) {
  switch (s) {
    case CandidateSource::Proximity: return "proximity";
    case CandidateSource::Voting: return "voting";
    case CandidateSource::Recheck: return "recheck";
  }
  return "?";
}

std::string_view to_string(VerdictKind k) { return k == VerdictKind::Matched ? "matched" : "undefined"; }

std::vector<LoopCandidate> proximity_candidates(const SessionGraph& session, std::uint32_t new_index, double radius,
                                                std::uint32_t min_index_gap) {
  std::vector<LoopCandidate> out;
  if (new_index >= session.submaps.size()) return out;
  const Submap& cur = session.submaps[new_index];
  for (std::uint32_t i = 0; i + min_index_gap <= new_index; ++i) {
    const Submap& h = session.submaps[i];
    if ((h.origin.translation() - cur.origin.translation()).norm() < radius) {
      out.push_back({cur.id, h.id, relative(cur.origin, h.origin), CandidateSource::Proximity, {}});
    }
  }
  return out;
}

PreparedSubmap prepare_submap(const Submap& submap, const LoopClosureConfig& cfg) {
  PreparedSubmap p;
  p.id = submap.id;
  PointCloud live = submap.live_cloud();
  if (!live.has_normals() && live.size() >= cfg.normal_k) {
    std::vector<Vec3f> origins = submap.scan_origins;
    live = estimate_normals(live, cfg.normal_k, origins);
  }
  p.source = voxel_downsample(live, cfg.source_voxel);
  p.source.normals.clear();
  if (!live.empty()) p.target = std::make_shared<const RegistrationTarget>(std::move(live));
  return p;
}

Mat6 loop_information(double rms_residual, const LoopClosureConfig& cfg) {
  const double st = std::max(rms_residual, cfg.sigma_floor);
  return diagonal_information(st, st / 5.0);
}

ValidationResult validate_candidate(const LoopCandidate& cand, const PreparedSubmap& current,
                                    const PreparedSubmap& history, const LoopClosureConfig& cfg) {
  ValidationResult out;
  if (!current.target || history.source.empty()) {
    out.reason = "empty submap";
    return out;
  }
  std::vector<Pose> seeds;
  if (cand.prior) seeds = yaw_variants(*cand.prior, cfg.prior_yaw_seeds);
  seeds.insert(seeds.end(), cand.seeds.begin(), cand.seeds.end());
  if (seeds.empty()) {
    out.reason = "no prior and no seeds";
    return out;
  }
  // The first seed runs alone; the rest only when it does not validate.
  auto rejection = [&](const IcpResult& r) -> std::string {
    if (r.overlap_ratio < cfg.min_overlap) {
      return "overlap " + std::to_string(r.overlap_ratio) + " below " + std::to_string(cfg.min_overlap);
    }
    if (cand.prior) {
      const PoseDelta d = pose_delta(*cand.prior, r.transform);
      if (d.translation >= cfg.max_prior_translation || d.rotation >= cfg.max_prior_rotation) {
        return "disagrees with prior by " + std::to_string(d.translation) + " m / " + std::to_string(d.rotation) + " rad";
      }
    }
    return {};
  };
  std::optional<IcpResult> best;
  std::string failure;
  try {
    best = icp(history.source, *current.target, seeds.front(), cfg.icp);
  } catch (const Error& e) {
    failure = e.what();
  }
  if (!best || !rejection(*best).empty()) {
    if (seeds.size() > 1) {
      try {
        IcpResult rest = multi_start_icp(history.source, *current.target, std::span(seeds).subspan(1), cfg.icp);
        if (!best || better_registration(rest, *best)) best = std::move(rest);
      } catch (const Error& e) {
        failure = e.what();
      }
    }
  }
  if (!best) {
    out.reason = "icp failed: " + failure;
    return out;
  }
  out.icp = std::move(*best);
  out.registered = true;
  out.reason = rejection(out.icp);
  if (!out.reason.empty()) return out;
  const EdgeKind kind = cand.current.session == cand.history.session ? EdgeKind::IntraLoop : EdgeKind::InterLoop;
  out.edge = LoopEdge{cand.current, cand.history, out.icp.transform, loop_information(out.icp.rms_residual, cfg), kind};
  return out;
}

bool consecutive_submaps(const SubmapId& a, const SubmapId& b) {
  return a.session == b.session && (a.index + 1 == b.index || b.index + 1 == a.index);
}

Verdict vote_submap(const SubmapMatchTally& tally, const VoteConfig& cfg, const NeighborFn& neighbors) {
  cfg.validate();
  Verdict v;
  v.submap = tally.submap;
  const std::uint32_t voted = tally.total_scans >= tally.failed ? tally.total_scans - tally.failed : 0;
  if (tally.total_scans == 0 || voted == 0 || tally.votes.empty()) {
    v.rule = 1;
    return v;
  }
  std::vector<std::pair<SubmapId, std::uint32_t>> ranked(tally.votes.begin(), tally.votes.end());
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  const double denom = double(cfg.strict_denominator ? tally.total_scans : voted);
  for (const auto& [id, count] : ranked) v.proportions.emplace_back(id, double(count) / denom);

  if (double(ranked.front().second) / denom >= cfg.gamma) {
    v.kind = VerdictKind::Matched;
    v.matched = {ranked.front().first};
    v.rule = 2;
    return v;
  }

  const std::size_t k = std::min<std::size_t>(cfg.n, ranked.size());
  std::uint64_t top = 0;
  for (std::size_t i = 0; i < k; ++i) top += ranked[i].second;
  if (k >= 2 && double(top) / denom >= cfg.gamma) {
    // the selected submaps must form one connected group
    std::vector<SubmapId> sel;
    for (std::size_t i = 0; i < k; ++i) sel.push_back(ranked[i].first);
    std::set<std::size_t> reached{0};
    std::deque<std::size_t> queue{0};
    while (!queue.empty()) {
      const std::size_t a = queue.front();
      queue.pop_front();
      for (std::size_t b = 0; b < sel.size(); ++b) {
        if (!reached.contains(b) && neighbors(sel[a], sel[b])) {
          reached.insert(b);
          queue.push_back(b);
        }
      }
    }
    if (reached.size() == sel.size()) {
      std::sort(sel.begin(), sel.end());
      v.kind = VerdictKind::Matched;
      v.matched = std::move(sel);
      v.rule = 3;
    }
  }
  return v;
}

std::vector<Pose> pairing_seeds(const Pose& current_scan_pose, const Pose& history_scan_pose, int yaw_count) {
  std::vector<Pose> seeds;
  const Pose back = history_scan_pose.inverse();
  for (int i = 0; i < yaw_count; ++i) {
    const double yaw = 2.0 * std::numbers::pi * double(i) / double(yaw_count);
    seeds.push_back(current_scan_pose * Pose::from_yaw(yaw) * back);
  }
  return seeds;
}

namespace {

const Pose* scan_pose_of(const Submap& s, std::uint32_t scan_id) {
  for (const auto& sp : s.own_scan_poses()) {
    if (sp.scan_id == scan_id) return &sp.pose;
  }
  return nullptr;
}

}  // namespace

SessionMatch match_new_session(const SignatureDatabase& db, const SessionGraph& new_session, std::span<const Scan> scans,
                               const VoteConfig& cfg, const std::map<SubmapId, const Submap*>& history_submaps,
                               int yaw_seeds, const GlobalPoseFn& global_pose) {
  const auto sigs = session_signatures(new_session, scans, db.config());
  return match_new_session(db, new_session, std::span<const PlaceSignature>(sigs), cfg, history_submaps, yaw_seeds,
                           global_pose);
}

SessionMatch match_new_session(const SignatureDatabase& db, const SessionGraph& new_session,
                               std::span<const PlaceSignature> signatures, const VoteConfig& cfg,
                               const std::map<SubmapId, const Submap*>& history_submaps, int yaw_seeds,
                               const GlobalPoseFn& global_pose) {
  cfg.validate();
  std::map<std::uint32_t, const PlaceSignature*> by_id;
  for (const auto& s : signatures) by_id.emplace(s.key.scan, &s);

  SessionMatch out;
  out.tallies.resize(new_session.submaps.size());
  for (std::size_t i = 0; i < new_session.submaps.size(); ++i) {
    const Submap& sm = new_session.submaps[i];
    SubmapMatchTally& t = out.tallies[i];
    t.submap = sm.id;
    for (const auto& sp : sm.own_scan_poses()) {
      ++t.total_scans;
      const auto it = by_id.find(sp.scan_id);
      std::optional<PlaceMatch> m;
      if (it != by_id.end() && db.size() > 0) m = db.query(*it->second);
      if (!m) {
        ++t.failed;
        continue;
      }
      const SubmapId h = m->key.submap_id();
      ++t.votes[h];
      auto bp = t.best_pair.find(h);
      if (bp == t.best_pair.end() || m->distance < bp->second.distance) {
        t.best_pair[h] = ScanPairing{sp.scan_id, m->key, m->distance};
      }
    }
  }

  for (std::size_t i = 0; i < out.tallies.size(); ++i) {
    out.verdicts.push_back(vote_submap(out.tallies[i], cfg));
    const Verdict& v = out.verdicts.back();
    if (v.kind != VerdictKind::Matched) continue;
    const Submap& cur = new_session.submaps[i];
    for (const auto& h : v.matched) {
      LoopCandidate cand{cur.id, h, std::nullopt, CandidateSource::Voting, {}};
      if (global_pose) {
        const auto gc = global_pose(cur.id);
        const auto gh = global_pose(h);
        if (gc && gh) cand.prior = relative(*gc, *gh);
      }
      const auto hs = history_submaps.find(h);
      const auto bp = out.tallies[i].best_pair.find(h);
      if (hs != history_submaps.end() && bp != out.tallies[i].best_pair.end()) {
        const Pose* pc = scan_pose_of(cur, bp->second.current_scan);
        const Pose* ph = scan_pose_of(*hs->second, bp->second.history.scan);
        if (pc && ph) cand.seeds = pairing_seeds(*pc, *ph, yaw_seeds);
      }
      out.candidates.push_back(std::move(cand));
    }
  }
  return out;
}

std::string verdict_report(std::span<const Verdict> verdicts) {
  std::ostringstream out;
  char buf[64];
  for (const auto& v : verdicts) {
    out << to_string(v.submap) << ' ' << to_string(v.kind) << " rule=" << v.rule << " matched=";
    if (v.matched.empty()) out << '-';
    for (std::size_t i = 0; i < v.matched.size(); ++i) out << (i ? "," : "") << to_string(v.matched[i]);
    out << " proportions=";
    if (v.proportions.empty()) out << '-';
    for (std::size_t i = 0; i < v.proportions.size(); ++i) {
      std::snprintf(buf, sizeof buf, "%.6f", v.proportions[i].second);
      out << (i ? "," : "") << to_string(v.proportions[i].first) << '=' << buf;
    }
    out << '\n';
  }
  return out.str();
}

namespace {

std::vector<std::string> split_on(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::size_t i = 0;
  for (;;) {
    const std::size_t j = s.find(sep, i);
    out.push_back(s.substr(i, j - i));
    if (j == std::string::npos) return out;
    i = j + 1;
  }
}

}  // namespace

std::vector<Verdict> parse_verdict_report(std::istream& in) {
  std::vector<Verdict> out;
  std::string raw;
  std::size_t line = 0;
  while (std::getline(in, raw)) {
    ++line;
    if (raw.empty()) continue;
    auto fail = [&](const std::string& what) {
      return Error(ErrorCode::ParseError, "verdict line " + std::to_string(line) + ": " + what);
    };
    std::istringstream fields(raw);
    std::string id, kind, rule, matched, props;
    if (!(fields >> id >> kind >> rule >> matched >> props)) throw fail("expected 5 fields");
    if (rule.rfind("rule=", 0) != 0 || matched.rfind("matched=", 0) != 0 || props.rfind("proportions=", 0) != 0) {
      throw fail("unexpected field names");
    }
    Verdict v;
    try {
      v.submap = parse_submap_id(id);
      if (kind == "matched") v.kind = VerdictKind::Matched;
      else if (kind == "undefined") v.kind = VerdictKind::Undefined;
      else throw fail("unknown verdict '" + kind + "'");
      v.rule = std::stoi(rule.substr(5));
      if (matched != "matched=-") {
        for (const auto& m : split_on(matched.substr(8), ',')) v.matched.push_back(parse_submap_id(m));
      }
      if (props != "proportions=-") {
        for (const auto& p : split_on(props.substr(12), ',')) {
          const auto eq = p.find('=');
          if (eq == std::string::npos) throw fail("bad proportion '" + p + "'");
          v.proportions.emplace_back(parse_submap_id(p.substr(0, eq)), std::stod(p.substr(eq + 1)));
        }
      }
    } catch (const std::logic_error&) {
      throw fail("bad number");
    } catch (const Error& e) {
      if (e.code() == ErrorCode::ParseError && std::string_view(e.what()).find("verdict line") != std::string_view::npos) throw;
      throw fail(e.what());
    }
    out.push_back(std::move(v));
  }
  return out;
}

}  // namespace msmap
