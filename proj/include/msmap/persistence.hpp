#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "msmap/multi_session.hpp"
#include "msmap/place_descriptor.hpp"
#include "msmap/pose_graph.hpp"
#include "msmap/simulator.hpp"
#include "msmap/submap.hpp"

namespace msmap {

// ---- record formats ---------------------------------------------------------

/// Plain-text graph, one record per line:
///   VERTEX s:i tx ty tz qx qy qz qw
///   EDGE kind s:i s:i tx ty tz qx qy qz qw i11 i12 .. i16 i22 .. i66
/// Numbers are written in shortest round-trip form. `#` starts a comment.
void write_graph(std::ostream& out, const PoseGraph& graph);
/// Throws ParseError naming the line.
PoseGraph read_graph(std::istream& in);

/// Binary little-endian submap file with a magic header.
void write_submap(std::ostream& out, const Submap& submap);
/// Throws ParseError with the byte offset on a short or malformed file.
Submap read_submap(std::istream& in);

struct SignatureFile {
  DescriptorConfig config;
  double d_alpha = 0.35;
  std::vector<PlaceSignature> signatures;
};
void write_signatures(std::ostream& out, const SignatureFile& file);
SignatureFile read_signatures(std::istream& in);

/// Scans with ground truth, as written by the simulate command.
void write_simulation(std::ostream& out, const sim::SimulatedSession& session);
sim::SimulatedSession read_simulation(std::istream& in);

// ---- session store ------------------------------------------------------------

/// Everything kept for one session: submaps with their clouds, the
/// session's own edges and the signatures of its scans.
struct StoredSession {
  SessionGraph graph;
  SignatureFile signatures;
  std::map<std::string, std::string> parameters;

  bool operator==(const StoredSession&) const;
};

/// Directory layout:
///   <root>/session_<id>/manifest.json
///   <root>/session_<id>/graph.txt
///   <root>/session_<id>/signatures.db
///   <root>/session_<id>/submaps/<index>.bin
/// The manifest records counts and the size and crc32 of every file.
class SessionStore {
 public:
  explicit SessionStore(std::filesystem::path root) : root_(std::move(root)) {}

  const std::filesystem::path& root() const { return root_; }
  std::filesystem::path session_dir(std::uint32_t session) const;

  /// Replaces any previous copy of the session. Throws IoError.
  void save(const StoredSession& session) const;
  /// Throws MissingSession, CorruptManifest, ChecksumMismatch, ParseError.
  StoredSession load(std::uint32_t session) const;
  /// Session ids with a manifest, ascending.
  std::vector<std::uint32_t> sessions() const;

 private:
  std::filesystem::path root_;
};

/// A merged map: sessions in merge order plus the inter-session edges,
/// kept as <root>/map.json and <root>/inter_edges.txt next to the
/// session directories.
struct StoredMap {
  std::vector<StoredSession> sessions;
  std::vector<LoopEdge> inter_edges;

  MultiSessionMap map() const;
  /// Database holding every session's signatures, in session order.
  SignatureDatabase database() const;
  bool operator==(const StoredMap&) const = default;
};

void save_map(const std::filesystem::path& root, const StoredMap& map);
/// Throws MissingSession when the root has no map.json.
StoredMap load_map(const std::filesystem::path& root);

// ---- import -------------------------------------------------------------------

enum class CloudFormat { AsciiXyz, BinaryPly };

struct ImportedScans {
  std::vector<Scan> scans;  // sensor frame
  std::vector<Pose> poses;  // sensor pose per scan, same order
};

/// Points in a common frame, grouped into scans by a scan id column
/// (ascii: `scan x y z` or `x y z` for a single scan 0; PLY: optional
/// integer `scan` vertex property). The sidecar holds one line
/// `scan tx ty tz qx qy qz qw` per scan; points are moved into each scan's
/// sensor frame. Throws ParseError naming the line or byte offset.
ImportedScans import_cloud_file(const std::filesystem::path& path, CloudFormat format,
                                const std::filesystem::path& poses_path);

/// Inverse of import: points in the common frame, ascii with a scan column.
void export_ascii_xyz(std::ostream& points, std::ostream& poses, std::span<const Scan> scans,
                      std::span<const Pose> scan_poses);

/// Pose list, one `scan tx ty tz qx qy qz qw` line each (the sidecar format).
void write_poses(std::ostream& out, std::span<const ScanPose> poses);
/// Throws ParseError naming the line, IoError when unreadable.
std::vector<ScanPose> read_poses(const std::filesystem::path& path);

/// crc32 of a byte buffer (zlib polynomial).
std::uint32_t crc32_of(std::string_view bytes);

}  // namespace msmap
