#include "msmap/place_descriptor.hpp"

#include <atomic>
#include <cmath>
#include <map>
#include <numbers>

#include "msmap/error.hpp"

namespace msmap {

void DescriptorConfig::validate() const {
  if (rings == 0 || bins == 0) throw Error(ErrorCode::InvalidConfig, "descriptor rings and bins must be positive");
  if (!(max_range > 0.0)) throw Error(ErrorCode::InvalidConfig, "descriptor max_range must be positive");
  if (!(max_elevation_deg > min_elevation_deg)) throw Error(ErrorCode::InvalidConfig, "descriptor elevation span empty");
}

PlaceSignature compute_signature(const Scan& scan, const DescriptorConfig& cfg, PlaceKey key) {
  cfg.validate();
  if (scan.points.empty()) throw Error(ErrorCode::EmptyScan, "scan " + std::to_string(scan.id) + " has no points");

  const double deg = std::numbers::pi / 180.0;
  const double elev_lo = cfg.min_elevation_deg * deg;
  const double elev_span = (cfg.max_elevation_deg - cfg.min_elevation_deg) * deg;

  std::vector<std::uint32_t> counts(cfg.length(), 0);
  std::vector<std::uint32_t> ring_total(cfg.rings, 0);
  for (const auto& p : scan.points) {
    const double horizontal = std::sqrt(p.x() * p.x() + p.y() * p.y());
    const double range = std::sqrt(horizontal * horizontal + p.z() * p.z());
    if (!(range > 0.0) || range >= cfg.max_range) continue;
    const double elevation = std::atan2(p.z(), horizontal);
    auto ring = static_cast<std::int64_t>(std::floor((elevation - elev_lo) / elev_span * cfg.rings));
    ring = std::clamp<std::int64_t>(ring, 0, cfg.rings - 1);
    auto bin = static_cast<std::int64_t>(std::floor(range / cfg.max_range * cfg.bins));
    bin = std::clamp<std::int64_t>(bin, 0, cfg.bins - 1);
    ++counts[std::size_t(ring) * cfg.bins + std::size_t(bin)];
    ++ring_total[std::size_t(ring)];
  }

  PlaceSignature sig;
  sig.key = key;
  sig.vector.assign(cfg.length(), 0.0f);
  for (std::uint32_t r = 0; r < cfg.rings; ++r) {
    if (ring_total[r] == 0) continue;
    for (std::uint32_t b = 0; b < cfg.bins; ++b) {
      const std::size_t i = std::size_t(r) * cfg.bins + b;
      sig.vector[i] = static_cast<float>(double(counts[i]) / double(ring_total[r]));
    }
  }
  return sig;
}

double signature_distance(const PlaceSignature& a, const PlaceSignature& b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.vector.size(); ++i) {
    const double d = double(a.vector[i]) - double(b.vector[i]);
    acc += d * d;
  }
  return std::sqrt(acc);
}

SignatureDatabase::SignatureDatabase(DescriptorConfig cfg, double d_alpha)
    : cfg_(cfg), d_alpha_(d_alpha), snapshot_(std::make_shared<const Snapshot>()) {
  cfg_.validate();
  if (!(d_alpha_ >= 0.0)) throw Error(ErrorCode::InvalidConfig, "d_alpha must be non-negative");
}

std::shared_ptr<const SignatureDatabase::Snapshot> SignatureDatabase::snapshot() const {
  return std::atomic_load(&snapshot_);
}

std::size_t SignatureDatabase::size() const { return snapshot()->signatures.size(); }

std::vector<PlaceSignature> SignatureDatabase::signatures() const { return snapshot()->signatures; }

void SignatureDatabase::insert(std::span<const PlaceSignature> sigs) {
  for (const auto& s : sigs) {
    if (s.vector.size() != cfg_.length()) {
      throw Error(ErrorCode::InvalidConfig, "signature length " + std::to_string(s.vector.size()) + " != " +
                                                std::to_string(cfg_.length()));
    }
  }
  auto next = std::make_shared<Snapshot>();
  next->signatures = snapshot()->signatures;
  next->signatures.insert(next->signatures.end(), sigs.begin(), sigs.end());
  std::vector<float> data;
  data.reserve(next->signatures.size() * cfg_.length());
  for (const auto& s : next->signatures) data.insert(data.end(), s.vector.begin(), s.vector.end());
  next->tree = KdTree<float>(std::move(data), cfg_.length());
  std::atomic_store(&snapshot_, std::shared_ptr<const Snapshot>(std::move(next)));
}

std::vector<PlaceSignature> session_signatures(const SessionGraph& session, std::span<const Scan> scans,
                                               const DescriptorConfig& cfg) {
  std::map<std::uint32_t, std::uint32_t> owner;
  for (const auto& sm : session.submaps) {
    for (const auto& sp : sm.own_scan_poses()) owner.emplace(sp.scan_id, sm.id.index);
  }
  std::vector<PlaceSignature> sigs;
  for (const auto& scan : scans) {
    const auto it = owner.find(scan.id);
    if (it == owner.end() || scan.points.empty()) continue;
    sigs.push_back(compute_signature(scan, cfg, {session.session, it->second, scan.id}));
  }
  return sigs;
}

void SignatureDatabase::insert_session(const SessionGraph& session, std::span<const Scan> scans) {
  insert(session_signatures(session, scans, cfg_));
}

PlaceMatch SignatureDatabase::nearest(const PlaceSignature& sig) const {
  const auto snap = snapshot();
  if (snap->signatures.empty()) throw Error(ErrorCode::EmptyDatabase, "signature database is empty");
  if (sig.vector.size() != cfg_.length()) throw Error(ErrorCode::InvalidConfig, "query signature length mismatch");
  const Neighbor n = snap->tree.nearest(sig.vector.data());
  return {snap->signatures[n.id].key, std::sqrt(n.distance)};
}

std::optional<PlaceMatch> SignatureDatabase::query(const PlaceSignature& sig) const {
  const auto snap = snapshot();
  if (snap->signatures.empty()) throw Error(ErrorCode::EmptyDatabase, "signature database is empty");
  if (sig.vector.size() != cfg_.length()) throw Error(ErrorCode::InvalidConfig, "query signature length mismatch");
  const Neighbor n = snap->tree.nearest(sig.vector.data(), d_alpha_ * d_alpha_);
  if (!std::isfinite(n.distance)) return std::nullopt;
  const double d = std::sqrt(n.distance);
  if (d > d_alpha_) return std::nullopt;
  return PlaceMatch{snap->signatures[n.id].key, d};
}

}  // namespace msmap
