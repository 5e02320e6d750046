#include "msmap/persistence.hpp"

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "msmap/error.hpp"

namespace msmap {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;

namespace {

constexpr std::string_view kSubmapMagic = "MSSUBM01";
constexpr std::string_view kSignatureMagic = "MSSIGS01";
constexpr std::string_view kSimulationMagic = "MSSIMU01";
constexpr int kManifestVersion = 1;

// ---- text numbers -----------------------------------------------------------

std::string fmt(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return {buf, r.ptr};
}

void put_pose(std::string& s, const Pose& p) {
  const Vec3& t = p.translation();
  const Quat& q = p.rotation();
  for (double v : {t.x(), t.y(), t.z(), q.x(), q.y(), q.z(), q.w()}) {
    s += ' ';
    s += fmt(v);
  }
}

std::vector<std::string_view> split(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
    std::size_t j = i;
    while (j < line.size() && line[j] != ' ' && line[j] != '\t' && line[j] != '\r') ++j;
    if (j > i) out.push_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

/// Message of `e` without its code prefix.
std::string detail(const Error& e) {
  const std::string_view w = e.what();
  const auto colon = w.find(": ");
  return std::string(colon == std::string_view::npos ? w : w.substr(colon + 2));
}

[[noreturn]] void parse_fail(std::size_t line, const std::string& what) {
  throw Error(ErrorCode::ParseError, "line " + std::to_string(line) + ": " + what);
}

double parse_double(std::string_view tok, std::size_t line) {
  double v = 0.0;
  const auto r = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (r.ec != std::errc() || r.ptr != tok.data() + tok.size()) parse_fail(line, "bad number '" + std::string(tok) + "'");
  return v;
}

std::uint32_t parse_u32(std::string_view tok, std::size_t line) {
  std::uint32_t v = 0;
  const auto r = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (r.ec != std::errc() || r.ptr != tok.data() + tok.size()) parse_fail(line, "bad integer '" + std::string(tok) + "'");
  return v;
}

Pose parse_pose(std::span<const std::string_view> tok, std::size_t line) {
  double v[7];
  for (int i = 0; i < 7; ++i) v[i] = parse_double(tok[i], line);
  // stored quaternions are already unit; keep their exact bits
  return Pose::from_unit(Quat(v[6], v[3], v[4], v[5]), Vec3(v[0], v[1], v[2]));
}

SubmapId parse_id(std::string_view tok, std::size_t line) {
  try {
    return parse_submap_id(std::string(tok));
  } catch (const Error& e) {
    parse_fail(line, detail(e));
  }
}

// ---- binary records ---------------------------------------------------------

class Writer {
 public:
  template <typename T>
  void put(const T& v) {
    static_assert(std::is_trivially_copyable_v<T>);
    buf_.append(reinterpret_cast<const char*>(&v), sizeof(T));
  }
  void bytes(std::string_view s) { buf_.append(s); }
  void pose(const Pose& p) {
    const Vec3& t = p.translation();
    const Quat& q = p.rotation();
    for (double v : {t.x(), t.y(), t.z(), q.x(), q.y(), q.z(), q.w()}) put(v);
  }
  const std::string& str() const { return buf_; }

 private:
  std::string buf_;
};

class Reader {
 public:
  explicit Reader(std::string buf) : buf_(std::move(buf)) {}
  template <typename T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, buf_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  void magic(std::string_view m) {
    need(m.size());
    if (std::string_view(buf_).substr(pos_, m.size()) != m) {
      throw Error(ErrorCode::ParseError, "offset 0: expected magic " + std::string(m));
    }
    pos_ += m.size();
  }
  Pose pose() {
    double v[7];
    for (double& x : v) x = get<double>();
    return Pose::from_unit(Quat(v[6], v[3], v[4], v[5]), Vec3(v[0], v[1], v[2]));
  }
  /// Guards element counts against the bytes actually left.
  std::size_t count(std::uint64_t n, std::size_t min_bytes_each) {
    if (min_bytes_each > 0 && n > (buf_.size() - pos_) / min_bytes_each) {
      throw Error(ErrorCode::ParseError, "offset " + std::to_string(pos_) + ": count " + std::to_string(n) + " exceeds file");
    }
    return std::size_t(n);
  }
  void finish() const {
    if (pos_ != buf_.size()) throw Error(ErrorCode::ParseError, "offset " + std::to_string(pos_) + ": trailing bytes");
  }

 private:
  void need(std::size_t n) const {
    if (buf_.size() - pos_ < n) throw Error(ErrorCode::ParseError, "offset " + std::to_string(pos_) + ": truncated");
  }
  std::string buf_;
  std::size_t pos_ = 0;
};

std::string slurp(std::istream& in) {
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + p.string());
  return slurp(in);
}

void write_file(const fs::path& p, std::string_view bytes) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + p.string());
  out.write(bytes.data(), std::streamsize(bytes.size()));
  if (!out) throw Error(ErrorCode::IoError, "write failed for " + p.string());
}

enum : std::uint8_t { kHasNormals = 1, kHasOrigins = 2, kHasDynamic = 4 };

}  // namespace

std::uint32_t crc32_of(std::string_view bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  std::size_t done = 0;
  while (done < bytes.size()) {
    const auto n = uInt(std::min<std::size_t>(bytes.size() - done, 1u << 30));
    crc = crc32(crc, reinterpret_cast<const Bytef*>(bytes.data() + done), n);
    done += n;
  }
  return std::uint32_t(crc);
}

// ---- graph -------------------------------------------------------------------

void write_graph(std::ostream& out, const PoseGraph& graph) {
  std::string s;
  for (const auto& [id, pose] : graph.vertices) {
    s += "VERTEX " + to_string(id);
    put_pose(s, pose);
    s += '\n';
  }
  for (const auto& e : graph.edges) {
    s += "EDGE " + std::string(to_string(e.kind)) + ' ' + to_string(e.from) + ' ' + to_string(e.to);
    put_pose(s, e.measurement);
    for (int r = 0; r < 6; ++r) {
      for (int c = r; c < 6; ++c) {
        s += ' ';
        s += fmt(e.information(r, c));
      }
    }
    s += '\n';
  }
  out << s;
}

PoseGraph read_graph(std::istream& in) {
  PoseGraph g;
  std::string raw;
  std::size_t line = 0;
  while (std::getline(in, raw)) {
    ++line;
    const auto tok = split(raw);
    if (tok.empty() || tok[0].front() == '#') continue;
    const std::span<const std::string_view> t(tok);
    if (tok[0] == "VERTEX") {
      if (tok.size() != 9) parse_fail(line, "VERTEX needs 8 fields");
      const SubmapId id = parse_id(tok[1], line);
      if (!g.vertices.emplace(id, parse_pose(t.subspan(2), line)).second) parse_fail(line, "duplicate vertex " + to_string(id));
    } else if (tok[0] == "EDGE") {
      if (tok.size() != 32) parse_fail(line, "EDGE needs 31 fields");
      LoopEdge e;
      try {
        e.kind = parse_edge_kind(tok[1]);
      } catch (const Error& err) {
        parse_fail(line, detail(err));
      }
      e.from = parse_id(tok[2], line);
      e.to = parse_id(tok[3], line);
      e.measurement = parse_pose(t.subspan(4), line);
      std::size_t k = 11;
      for (int r = 0; r < 6; ++r) {
        for (int c = r; c < 6; ++c) {
          e.information(r, c) = e.information(c, r) = parse_double(tok[k++], line);
        }
      }
      g.edges.push_back(e);
    } else {
      parse_fail(line, "unknown record '" + std::string(tok[0]) + "'");
    }
  }
  return g;
}

// ---- submaps -------------------------------------------------------------------

void write_submap(std::ostream& out, const Submap& s) {
  s.check_invariants();
  Writer w;
  w.bytes(kSubmapMagic);
  w.put(s.id.session);
  w.put(s.id.index);
  w.pose(s.origin);
  w.put(s.scan_count);
  w.put(std::uint32_t(s.scan_poses.size()));
  for (const auto& sp : s.scan_poses) {
    w.put(sp.scan_id);
    w.pose(sp.pose);
  }
  w.put(std::uint32_t(s.scan_origins.size()));
  for (const auto& o : s.scan_origins) {
    for (int i = 0; i < 3; ++i) w.put(o[i]);
  }
  const PointCloud& c = s.cloud;
  std::uint8_t flags = 0;
  if (c.has_normals()) flags |= kHasNormals;
  if (c.has_origins()) flags |= kHasOrigins;
  if (!s.dynamic_probability.empty()) flags |= kHasDynamic;
  w.put(std::uint64_t(c.size()));
  w.put(flags);
  for (std::size_t i = 0; i < c.size(); ++i) {
    for (int k = 0; k < 3; ++k) w.put(c.points[i][k]);
    if (flags & kHasNormals) {
      for (int k = 0; k < 3; ++k) w.put(c.normals[i][k]);
    }
    if (flags & kHasOrigins) w.put(c.origin_index[i]);
    w.put(c.live[i]);
    if (flags & kHasDynamic) w.put(s.dynamic_probability[i]);
  }
  out << w.str();
}

Submap read_submap(std::istream& in) {
  Reader r(slurp(in));
  r.magic(kSubmapMagic);
  Submap s;
  s.id.session = r.get<std::uint32_t>();
  s.id.index = r.get<std::uint32_t>();
  s.origin = r.pose();
  s.scan_count = r.get<std::uint32_t>();
  s.scan_poses.resize(r.count(r.get<std::uint32_t>(), 60));
  for (auto& sp : s.scan_poses) {
    sp.scan_id = r.get<std::uint32_t>();
    sp.pose = r.pose();
  }
  s.scan_origins.resize(r.count(r.get<std::uint32_t>(), 12));
  for (auto& o : s.scan_origins) {
    for (int i = 0; i < 3; ++i) o[i] = r.get<float>();
  }
  const std::size_t n = r.count(r.get<std::uint64_t>(), 13);
  const auto flags = r.get<std::uint8_t>();
  PointCloud& c = s.cloud;
  c.points.resize(n);
  c.live.resize(n);
  if (flags & kHasNormals) c.normals.resize(n);
  if (flags & kHasOrigins) c.origin_index.resize(n);
  if (flags & kHasDynamic) s.dynamic_probability.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (int k = 0; k < 3; ++k) c.points[i][k] = r.get<float>();
    if (flags & kHasNormals) {
      for (int k = 0; k < 3; ++k) c.normals[i][k] = r.get<float>();
    }
    if (flags & kHasOrigins) c.origin_index[i] = r.get<std::uint16_t>();
    c.live[i] = r.get<std::uint8_t>();
    if (flags & kHasDynamic) s.dynamic_probability[i] = r.get<float>();
  }
  r.finish();
  try {
    s.check_invariants();
  } catch (const Error& e) {
    throw Error(ErrorCode::ParseError, std::string("submap ") + to_string(s.id) + ": " + e.what());
  }
  return s;
}

// ---- signatures ------------------------------------------------------------------

void write_signatures(std::ostream& out, const SignatureFile& f) {
  f.config.validate();
  Writer w;
  w.bytes(kSignatureMagic);
  w.put(f.config.rings);
  w.put(f.config.bins);
  w.put(f.config.max_range);
  w.put(f.config.min_elevation_deg);
  w.put(f.config.max_elevation_deg);
  w.put(f.d_alpha);
  w.put(std::uint64_t(f.signatures.size()));
  for (const auto& s : f.signatures) {
    if (s.vector.size() != f.config.length()) throw Error(ErrorCode::InvalidConfig, "signature length mismatch");
    w.put(s.key.session);
    w.put(s.key.submap);
    w.put(s.key.scan);
    for (float v : s.vector) w.put(v);
  }
  out << w.str();
}

SignatureFile read_signatures(std::istream& in) {
  Reader r(slurp(in));
  r.magic(kSignatureMagic);
  SignatureFile f;
  f.config.rings = r.get<std::uint32_t>();
  f.config.bins = r.get<std::uint32_t>();
  f.config.max_range = r.get<double>();
  f.config.min_elevation_deg = r.get<double>();
  f.config.max_elevation_deg = r.get<double>();
  f.d_alpha = r.get<double>();
  try {
    f.config.validate();
  } catch (const Error& e) {
    throw Error(ErrorCode::ParseError, std::string("signature header: ") + e.what());
  }
  const std::size_t len = f.config.length();
  f.signatures.resize(r.count(r.get<std::uint64_t>(), 12 + 4 * len));
  for (auto& s : f.signatures) {
    s.key.session = r.get<std::uint32_t>();
    s.key.submap = r.get<std::uint32_t>();
    s.key.scan = r.get<std::uint32_t>();
    s.vector.resize(len);
    for (float& v : s.vector) v = r.get<float>();
  }
  r.finish();
  return f;
}

// ---- simulation ------------------------------------------------------------------

void write_simulation(std::ostream& out, const sim::SimulatedSession& s) {
  if (s.ground_truth.size() != s.scans.size()) throw Error(ErrorCode::InvalidConfig, "ground truth count != scan count");
  Writer w;
  w.bytes(kSimulationMagic);
  w.put(s.session);
  w.put(std::uint64_t(s.scans.size()));
  for (std::size_t i = 0; i < s.scans.size(); ++i) {
    const Scan& scan = s.scans[i];
    const bool labeled = i < s.labels.size() && i < s.object_ids.size();
    if (labeled && (s.labels[i].size() != scan.points.size() || s.object_ids[i].size() != scan.points.size())) {
      throw Error(ErrorCode::InvalidConfig, "label count != point count in scan " + std::to_string(scan.id));
    }
    w.put(scan.id);
    w.pose(s.ground_truth[i]);
    w.put(std::uint64_t(scan.points.size()));
    w.put(std::uint8_t(labeled));
    for (const auto& p : scan.points) {
      for (int k = 0; k < 3; ++k) w.put(p[k]);
    }
    if (labeled) {
      for (auto l : s.labels[i]) w.put(static_cast<std::uint8_t>(l));
      for (auto id : s.object_ids[i]) w.put(id);
    }
  }
  out << w.str();
}

sim::SimulatedSession read_simulation(std::istream& in) {
  Reader r(slurp(in));
  r.magic(kSimulationMagic);
  sim::SimulatedSession s;
  s.session = r.get<std::uint32_t>();
  const std::size_t n = r.count(r.get<std::uint64_t>(), 69);
  s.scans.resize(n);
  s.ground_truth.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    Scan& scan = s.scans[i];
    scan.id = r.get<std::uint32_t>();
    s.ground_truth[i] = r.pose();
    const std::size_t m = r.count(r.get<std::uint64_t>(), 24);
    const bool labeled = r.get<std::uint8_t>() != 0;
    scan.points.resize(m);
    for (auto& p : scan.points) {
      for (int k = 0; k < 3; ++k) p[k] = r.get<double>();
    }
    if (labeled) {
      s.labels.emplace_back(m);
      s.object_ids.emplace_back(m);
      for (auto& l : s.labels.back()) {
        const auto v = r.get<std::uint8_t>();
        if (v > 2) throw Error(ErrorCode::ParseError, "bad point label " + std::to_string(v));
        l = sim::PointLabel(v);
      }
      for (auto& id : s.object_ids.back()) id = r.get<std::uint32_t>();
    }
  }
  if (!s.labels.empty() && s.labels.size() != n) throw Error(ErrorCode::ParseError, "labels present for only some scans");
  r.finish();
  return s;
}

// ---- store -------------------------------------------------------------------------

bool StoredSession::operator==(const StoredSession& o) const {
  return graph == o.graph && signatures.config == o.signatures.config && signatures.d_alpha == o.signatures.d_alpha &&
         signatures.signatures == o.signatures.signatures && parameters == o.parameters;
}

fs::path SessionStore::session_dir(std::uint32_t session) const {
  return root_ / ("session_" + std::to_string(session));
}

namespace {

Json file_entry(const std::string& name, std::string_view bytes) {
  return Json{{"name", name}, {"bytes", bytes.size()}, {"crc32", crc32_of(bytes)}};
}

PoseGraph session_file_graph(const SessionGraph& g) {
  PoseGraph out;
  for (const auto& s : g.submaps) out.vertices[s.id] = s.origin;
  out.edges = g.odometry_edges;
  out.edges.insert(out.edges.end(), g.loop_edges.begin(), g.loop_edges.end());
  return out;
}

Json read_manifest(const fs::path& path) {
  Json j;
  try {
    j = Json::parse(read_file(path));
  } catch (const Json::exception& e) {
    throw Error(ErrorCode::CorruptManifest, path.string() + ": " + e.what());
  }
  return j;
}

/// Reads a file listed in a manifest and checks its size and crc.
std::string checked_file(const fs::path& dir, const Json& entry) {
  const auto name = entry.at("name").get<std::string>();
  if (name.find("..") != std::string::npos || fs::path(name).is_absolute()) {
    throw Error(ErrorCode::CorruptManifest, "bad file name '" + name + "'");
  }
  const fs::path p = dir / name;
  if (!fs::exists(p)) throw Error(ErrorCode::CorruptManifest, "listed file missing: " + p.string());
  std::string bytes = read_file(p);
  if (bytes.size() != entry.at("bytes").get<std::uint64_t>() || crc32_of(bytes) != entry.at("crc32").get<std::uint32_t>()) {
    throw Error(ErrorCode::ChecksumMismatch, p.string());
  }
  return bytes;
}

}  // namespace

void SessionStore::save(const StoredSession& stored) const {
  const SessionGraph& g = stored.graph;
  const fs::path dir = session_dir(g.session);
  std::error_code ec;
  fs::remove_all(dir, ec);
  fs::create_directories(dir / "submaps", ec);
  if (ec) throw Error(ErrorCode::IoError, "cannot create " + dir.string() + ": " + ec.message());

  Json files = Json::array();
  auto emit = [&](const std::string& name, const std::string& bytes) {
    write_file(dir / name, bytes);
    files.push_back(file_entry(name, bytes));
  };
  std::ostringstream graph;
  write_graph(graph, session_file_graph(g));
  emit("graph.txt", graph.str());
  std::ostringstream sigs;
  write_signatures(sigs, stored.signatures);
  emit("signatures.db", sigs.str());
  std::size_t points = 0;
  for (const auto& s : g.submaps) {
    if (s.id.session != g.session) throw Error(ErrorCode::InvalidConfig, "submap " + to_string(s.id) + " in session " + std::to_string(g.session));
    std::ostringstream b;
    write_submap(b, s);
    emit("submaps/" + std::to_string(s.id.index) + ".bin", b.str());
    points += s.cloud.size();
  }

  Json params = Json::object();
  for (const auto& [k, v] : stored.parameters) params[k] = v;
  Json m;
  m["format"] = "msmap-session";
  m["version"] = kManifestVersion;
  m["session"] = g.session;
  m["parameters"] = params;
  m["counts"] = {{"submaps", g.submaps.size()},
                 {"odometry_edges", g.odometry_edges.size()},
                 {"loop_edges", g.loop_edges.size()},
                 {"signatures", stored.signatures.signatures.size()},
                 {"points", points}};
  m["files"] = files;
  write_file(dir / "manifest.json", m.dump(2) + "\n");
}

StoredSession SessionStore::load(std::uint32_t session) const {
  const fs::path dir = session_dir(session);
  const fs::path mpath = dir / "manifest.json";
  if (!fs::exists(mpath)) throw Error(ErrorCode::MissingSession, "no session " + std::to_string(session) + " under " + root_.string());
  const Json m = read_manifest(mpath);
  StoredSession out;
  try {
    if (m.at("format") != "msmap-session" || m.at("version") != kManifestVersion) {
      throw Error(ErrorCode::CorruptManifest, "unsupported manifest format");
    }
    if (m.at("session").get<std::uint32_t>() != session) throw Error(ErrorCode::CorruptManifest, "manifest names another session");
    for (const auto& [k, v] : m.at("parameters").items()) out.parameters[k] = v.get<std::string>();
    const Json& counts = m.at("counts");
    out.graph.session = session;

    std::map<std::string, std::string> blobs;
    for (const auto& entry : m.at("files")) blobs[entry.at("name").get<std::string>()] = checked_file(dir, entry);
    auto blob = [&](const std::string& name) -> std::istringstream {
      const auto it = blobs.find(name);
      if (it == blobs.end()) throw Error(ErrorCode::CorruptManifest, "manifest does not list " + name);
      return std::istringstream(it->second);
    };

    auto gs = blob("graph.txt");
    const PoseGraph graph = read_graph(gs);
    auto ss = blob("signatures.db");
    out.signatures = read_signatures(ss);
    std::size_t points = 0;
    for (const auto& [id, pose] : graph.vertices) {
      if (id.session != session) throw Error(ErrorCode::CorruptManifest, "graph vertex " + to_string(id) + " from another session");
      auto bs = blob("submaps/" + std::to_string(id.index) + ".bin");
      Submap s = read_submap(bs);
      if (s.id != id || !(s.origin == pose)) throw Error(ErrorCode::CorruptManifest, "submap file disagrees with graph for " + to_string(id));
      points += s.cloud.size();
      out.graph.submaps.push_back(std::move(s));
    }
    for (const auto& e : graph.edges) {
      if (e.kind == EdgeKind::Odometry) out.graph.odometry_edges.push_back(e);
      else if (e.kind == EdgeKind::IntraLoop) out.graph.loop_edges.push_back(e);
      else throw Error(ErrorCode::CorruptManifest, "inter-session edge inside a session graph");
    }
    if (counts.at("submaps").get<std::size_t>() != out.graph.submaps.size() ||
        counts.at("odometry_edges").get<std::size_t>() != out.graph.odometry_edges.size() ||
        counts.at("loop_edges").get<std::size_t>() != out.graph.loop_edges.size() ||
        counts.at("signatures").get<std::size_t>() != out.signatures.signatures.size() ||
        counts.at("points").get<std::size_t>() != points || blobs.size() != 2 + out.graph.submaps.size()) {
      throw Error(ErrorCode::CorruptManifest, "manifest counts disagree with files");
    }
  } catch (const Json::exception& e) {
    throw Error(ErrorCode::CorruptManifest, mpath.string() + ": " + e.what());
  }
  return out;
}

std::vector<std::uint32_t> SessionStore::sessions() const {
  std::vector<std::uint32_t> out;
  std::error_code ec;
  for (const auto& entry : fs::directory_iterator(root_, ec)) {
    const std::string name = entry.path().filename().string();
    if (name.rfind("session_", 0) != 0 || !fs::exists(entry.path() / "manifest.json")) continue;
    std::uint32_t id = 0;
    const auto r = std::from_chars(name.data() + 8, name.data() + name.size(), id);
    if (r.ec == std::errc() && r.ptr == name.data() + name.size()) out.push_back(id);
  }
  std::sort(out.begin(), out.end());
  return out;
}

MultiSessionMap StoredMap::map() const {
  MultiSessionMap m;
  for (const auto& s : sessions) m.sessions.push_back(s.graph);
  m.inter_edges = inter_edges;
  return m;
}

SignatureDatabase StoredMap::database() const {
  if (sessions.empty()) return SignatureDatabase{};
  const auto& first = sessions.front().signatures;
  SignatureDatabase db(first.config, first.d_alpha);
  for (const auto& s : sessions) {
    if (!(s.signatures.config == first.config)) throw Error(ErrorCode::InvalidConfig, "sessions disagree on descriptor config");
    db.insert(s.signatures.signatures);
  }
  return db;
}

void save_map(const fs::path& root, const StoredMap& map) {
  const SessionStore store(root);
  std::error_code ec;
  fs::create_directories(root, ec);
  if (ec) throw Error(ErrorCode::IoError, "cannot create " + root.string() + ": " + ec.message());
  Json order = Json::array();
  for (const auto& s : map.sessions) {
    store.save(s);
    order.push_back(s.graph.session);
  }
  PoseGraph inter;
  inter.edges = map.inter_edges;
  std::ostringstream edges;
  write_graph(edges, inter);
  write_file(root / "inter_edges.txt", edges.str());
  Json m;
  m["format"] = "msmap-map";
  m["version"] = kManifestVersion;
  m["sessions"] = order;
  m["counts"] = {{"inter_edges", map.inter_edges.size()}};
  m["files"] = Json::array({file_entry("inter_edges.txt", edges.str())});
  write_file(root / "map.json", m.dump(2) + "\n");
}

StoredMap load_map(const fs::path& root) {
  const fs::path mpath = root / "map.json";
  if (!fs::exists(mpath)) throw Error(ErrorCode::MissingSession, "no map under " + root.string());
  const Json m = read_manifest(mpath);
  StoredMap out;
  const SessionStore store(root);
  try {
    if (m.at("format") != "msmap-map" || m.at("version") != kManifestVersion) {
      throw Error(ErrorCode::CorruptManifest, "unsupported map format");
    }
    for (const auto& id : m.at("sessions")) out.sessions.push_back(store.load(id.get<std::uint32_t>()));
    const auto& files = m.at("files");
    if (files.size() != 1 || files[0].at("name") != "inter_edges.txt") throw Error(ErrorCode::CorruptManifest, "map must list inter_edges.txt");
    std::istringstream es(checked_file(root, files[0]));
    const PoseGraph inter = read_graph(es);
    if (!inter.vertices.empty()) throw Error(ErrorCode::CorruptManifest, "vertices in inter_edges.txt");
    out.inter_edges = inter.edges;
    if (m.at("counts").at("inter_edges").get<std::size_t>() != out.inter_edges.size()) {
      throw Error(ErrorCode::CorruptManifest, "manifest counts disagree with files");
    }
  } catch (const Json::exception& e) {
    throw Error(ErrorCode::CorruptManifest, mpath.string() + ": " + e.what());
  }
  return out;
}

// ---- import / export ---------------------------------------------------------------

namespace {

std::map<std::uint32_t, Pose> read_pose_sidecar(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  std::map<std::uint32_t, Pose> out;
  std::string raw;
  std::size_t line = 0;
  while (std::getline(in, raw)) {
    ++line;
    const auto tok = split(raw);
    if (tok.empty() || tok[0].front() == '#') continue;
    if (tok.size() != 8) throw Error(ErrorCode::ParseError, path.string() + " line " + std::to_string(line) + ": expected 8 fields");
    try {
      const std::uint32_t id = parse_u32(tok[0], line);
      const std::span<const std::string_view> t(tok);
      double v[7];
      for (int i = 0; i < 7; ++i) v[i] = parse_double(t[1 + i], line);
      const Quat q(v[6], v[3], v[4], v[5]);
      if (q.norm() < 1e-9) parse_fail(line, "zero quaternion");
      if (!out.emplace(id, Pose(q, Vec3(v[0], v[1], v[2]))).second) parse_fail(line, "duplicate scan " + std::to_string(id));
    } catch (const Error& e) {
      throw Error(ErrorCode::ParseError, path.string() + " " + detail(e));
    }
  }
  return out;
}

struct RawPoint {
  std::uint32_t scan;
  Vec3 p;
};

std::vector<RawPoint> read_ascii(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  std::vector<RawPoint> out;
  std::string raw;
  std::size_t line = 0;
  while (std::getline(in, raw)) {
    ++line;
    const auto tok = split(raw);
    if (tok.empty() || tok[0].front() == '#') continue;
    try {
      if (tok.size() == 3) {
        out.push_back({0, Vec3(parse_double(tok[0], line), parse_double(tok[1], line), parse_double(tok[2], line))});
      } else if (tok.size() == 4) {
        out.push_back({parse_u32(tok[0], line),
                       Vec3(parse_double(tok[1], line), parse_double(tok[2], line), parse_double(tok[3], line))});
      } else {
        parse_fail(line, "expected 3 or 4 fields, got " + std::to_string(tok.size()));
      }
    } catch (const Error& e) {
      throw Error(ErrorCode::ParseError, path.string() + " " + detail(e));
    }
  }
  return out;
}

std::size_t ply_type_size(std::string_view t) {
  if (t == "char" || t == "uchar" || t == "int8" || t == "uint8") return 1;
  if (t == "short" || t == "ushort" || t == "int16" || t == "uint16") return 2;
  if (t == "int" || t == "uint" || t == "float" || t == "int32" || t == "uint32" || t == "float32") return 4;
  if (t == "double" || t == "float64") return 8;
  return 0;
}

double ply_value(const char* p, std::string_view t) {
  if (t == "char" || t == "int8") return double(*reinterpret_cast<const std::int8_t*>(p));
  if (t == "uchar" || t == "uint8") return double(*reinterpret_cast<const std::uint8_t*>(p));
  auto as = [p]<typename T>(T) {
    T v;
    std::memcpy(&v, p, sizeof v);
    return double(v);
  };
  if (t == "short" || t == "int16") return as(std::int16_t{});
  if (t == "ushort" || t == "uint16") return as(std::uint16_t{});
  if (t == "int" || t == "int32") return as(std::int32_t{});
  if (t == "uint" || t == "uint32") return as(std::uint32_t{});
  if (t == "float" || t == "float32") return as(float{});
  return as(double{});
}

std::vector<RawPoint> read_ply(const fs::path& path) {
  const std::string bytes = read_file(path);
  std::size_t pos = 0, line = 0;
  auto next_line = [&]() -> std::string_view {
    const std::size_t end = bytes.find('\n', pos);
    if (end == std::string::npos) throw Error(ErrorCode::ParseError, path.string() + " line " + std::to_string(line + 1) + ": header not terminated");
    std::string_view l(bytes.data() + pos, end - pos);
    pos = end + 1;
    ++line;
    return l;
  };
  auto fail = [&](const std::string& what) -> void {
    throw Error(ErrorCode::ParseError, path.string() + " line " + std::to_string(line) + ": " + what);
  };
  if (split(next_line()) != std::vector<std::string_view>{"ply"}) fail("missing 'ply' magic");
  struct Prop {
    std::string name, type;
    std::size_t offset;
  };
  std::vector<Prop> props;
  std::size_t stride = 0, count = 0;
  bool in_vertex = false, seen_vertex = false, seen_format = false;
  for (;;) {
    const auto tok = split(next_line());
    if (tok.empty() || tok[0] == "comment" || tok[0] == "obj_info") continue;
    if (tok[0] == "end_header") break;
    if (tok[0] == "format") {
      if (tok.size() != 3 || tok[1] != "binary_little_endian") fail("only binary_little_endian PLY is supported");
      seen_format = true;
    } else if (tok[0] == "element") {
      if (tok.size() != 3) fail("bad element line");
      if (seen_vertex) fail("elements after vertex are not supported");
      in_vertex = tok[1] == "vertex";
      if (!in_vertex) fail("first element must be vertex");
      seen_vertex = true;
      count = parse_u32(tok[2], line);
    } else if (tok[0] == "property") {
      if (!in_vertex) fail("property outside vertex element");
      if (tok.size() != 3) fail("list properties are not supported");
      const std::size_t sz = ply_type_size(tok[1]);
      if (sz == 0) fail("unknown property type '" + std::string(tok[1]) + "'");
      props.push_back({std::string(tok[2]), std::string(tok[1]), stride});
      stride += sz;
    } else {
      fail("unknown header keyword '" + std::string(tok[0]) + "'");
    }
  }
  if (!seen_format || !seen_vertex) fail("header lacks format or vertex element");
  auto find = [&](const std::string& n) -> const Prop* {
    for (const auto& p : props) {
      if (p.name == n) return &p;
    }
    return nullptr;
  };
  const Prop *px = find("x"), *py = find("y"), *pz = find("z"), *ps = find("scan");
  if (!px || !py || !pz) fail("vertex lacks x, y or z");
  if (ps && (ps->type == "float" || ps->type == "float32" || ps->type == "double" || ps->type == "float64")) {
    fail("scan property must be an integer type");
  }
  if ((bytes.size() - pos) / stride < count || bytes.size() - pos != count * stride) {
    throw Error(ErrorCode::ParseError, path.string() + " offset " + std::to_string(pos) + ": body holds " +
                                           std::to_string(bytes.size() - pos) + " bytes, expected " +
                                           std::to_string(count * stride));
  }
  std::vector<RawPoint> out(count);
  for (std::size_t i = 0; i < count; ++i) {
    const char* rec = bytes.data() + pos + i * stride;
    out[i].p = Vec3(ply_value(rec + px->offset, px->type), ply_value(rec + py->offset, py->type),
                    ply_value(rec + pz->offset, pz->type));
    if (ps) {
      const double s = ply_value(rec + ps->offset, ps->type);
      if (s < 0) {
        throw Error(ErrorCode::ParseError, path.string() + " offset " + std::to_string(pos + i * stride) + ": negative scan id");
      }
      out[i].scan = std::uint32_t(s);
    } else {
      out[i].scan = 0;
    }
  }
  return out;
}

}  // namespace

void write_poses(std::ostream& out, std::span<const ScanPose> poses) {
  std::string s;
  for (const auto& sp : poses) {
    s += std::to_string(sp.scan_id);
    put_pose(s, sp.pose);
    s += '\n';
  }
  out << s;
}

std::vector<ScanPose> read_poses(const fs::path& path) {
  std::vector<ScanPose> out;
  for (const auto& [id, pose] : read_pose_sidecar(path)) out.push_back({id, pose});
  return out;
}

ImportedScans import_cloud_file(const fs::path& path, CloudFormat format, const fs::path& poses_path) {
  if (!fs::exists(path)) throw Error(ErrorCode::IoError, "no such file: " + path.string());
  const auto poses = read_pose_sidecar(poses_path);
  const auto raw = format == CloudFormat::AsciiXyz ? read_ascii(path) : read_ply(path);
  std::map<std::uint32_t, std::vector<Vec3>> grouped;
  for (const auto& r : raw) grouped[r.scan].push_back(r.p);
  for (const auto& [id, pose] : poses) grouped.try_emplace(id);  // scans without returns stay
  ImportedScans out;
  for (auto& [id, pts] : grouped) {
    const auto it = poses.find(id);
    if (it == poses.end()) throw Error(ErrorCode::ParseError, poses_path.string() + ": no pose for scan " + std::to_string(id));
    const Pose inv = it->second.inverse();
    Scan s;
    s.id = id;
    s.points.reserve(pts.size());
    for (const auto& p : pts) s.points.push_back(inv.apply(p));
    out.scans.push_back(std::move(s));
    out.poses.push_back(it->second);
  }
  return out;
}

void export_ascii_xyz(std::ostream& points, std::ostream& poses, std::span<const Scan> scans,
                      std::span<const Pose> scan_poses) {
  if (scans.size() != scan_poses.size()) throw Error(ErrorCode::InvalidConfig, "one pose per scan required");
  std::string s, ps;
  for (std::size_t i = 0; i < scans.size(); ++i) {
    ps += std::to_string(scans[i].id);
    put_pose(ps, scan_poses[i]);
    ps += '\n';
    for (const auto& p : scans[i].points) {
      const Vec3 w = scan_poses[i].apply(p);
      s += std::to_string(scans[i].id) + ' ' + fmt(w.x()) + ' ' + fmt(w.y()) + ' ' + fmt(w.z()) + '\n';
    }
  }
  points << s;
  poses << ps;
}

}  // namespace msmap
