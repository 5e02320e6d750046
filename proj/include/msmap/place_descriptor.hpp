#pragma once

#include <compare>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "msmap/kdtree.hpp"
#include "msmap/submap.hpp"

namespace msmap {

struct DescriptorConfig {
  std::uint32_t rings = 16;
  std::uint32_t bins = 40;
  double max_range = 50.0;
  /// Elevation span partitioned into `rings` equal bands; points outside
  /// fall into the nearest end band.
  double min_elevation_deg = -16.0;
  double max_elevation_deg = 16.0;

  std::size_t length() const { return std::size_t(rings) * bins; }
  void validate() const;
  bool operator==(const DescriptorConfig&) const = default;
};

/// Links a signature back to its scan and the submap holding it.
struct PlaceKey {
  std::uint32_t session = 0;
  std::uint32_t submap = 0;
  std::uint32_t scan = 0;
  auto operator<=>(const PlaceKey&) const = default;
  SubmapId submap_id() const { return {session, submap}; }
};

/// Per-ring normalized range histograms, ring-major. Yaw invariant because
/// it depends only on each point's range and elevation.
struct PlaceSignature {
  PlaceKey key;
  std::vector<float> vector;
  bool operator==(const PlaceSignature&) const = default;
};

/// Throws EmptyScan.
PlaceSignature compute_signature(const Scan& scan, const DescriptorConfig& cfg, PlaceKey key = {});
/// Signature of every non-empty scan registered in the session's submaps.
std::vector<PlaceSignature> session_signatures(const SessionGraph& session, std::span<const Scan> scans,
                                               const DescriptorConfig& cfg);
double signature_distance(const PlaceSignature& a, const PlaceSignature& b);

struct PlaceMatch {
  PlaceKey key;
  double distance = 0.0;
};

/// Append-only signature store with an exact nearest-neighbor index. Queries
/// read an immutable snapshot; inserts publish a new one atomically.
class SignatureDatabase {
 public:
  explicit SignatureDatabase(DescriptorConfig cfg = {}, double d_alpha = 0.35);

  const DescriptorConfig& config() const { return cfg_; }
  double d_alpha() const { return d_alpha_; }
  void set_d_alpha(double d) { d_alpha_ = d; }

  std::size_t size() const;
  std::vector<PlaceSignature> signatures() const;

  /// Throws InvalidConfig when a vector length disagrees with the config.
  void insert(std::span<const PlaceSignature> sigs);
  /// Signatures for every scan registered in the session's submaps.
  void insert_session(const SessionGraph& session, std::span<const Scan> scans);

  /// Nearest stored signature. Throws EmptyDatabase.
  PlaceMatch nearest(const PlaceSignature& sig) const;
  /// Nearest stored signature, or nullopt when farther than d_alpha.
  std::optional<PlaceMatch> query(const PlaceSignature& sig) const;

 private:
  struct Snapshot {
    std::vector<PlaceSignature> signatures;
    KdTree<float> tree;
  };
  std::shared_ptr<const Snapshot> snapshot() const;

  DescriptorConfig cfg_;
  double d_alpha_;
  std::shared_ptr<const Snapshot> snapshot_;
};

}  // namespace msmap
