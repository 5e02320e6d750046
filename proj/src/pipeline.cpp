#include "msmap/pipeline.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <functional>
#include <json.hpp>
#include <set>
#include <sstream>

#include "msmap/error.hpp"
#include "msmap/eval.hpp"
#include "msmap/parallel.hpp"

namespace msmap {

namespace fs = std::filesystem;

// ---- configuration ----------------------------------------------------------------

SlamConfig RunConfig::slam_config() const {
  SlamConfig s = slam;
  s.loop = loop;
  s.optimizer = optimizer;
  return s;
}

MergeConfig RunConfig::merge_config() const {
  MergeConfig m;
  m.vote = vote;
  m.loop = loop;
  m.optimizer = optimizer;
  m.yaw_seeds = merge_yaw_seeds;
  m.recheck = merge_recheck;
  return m;
}

void RunConfig::validate() const {
  slam_config().validate();
  merge_config().validate();
  descriptor.validate();
  dynamic.validate();
  if (!(d_alpha > 0.0)) throw Error(ErrorCode::InvalidConfig, "d_alpha must be positive");
  if (!(verdict_radius > 0.0)) throw Error(ErrorCode::InvalidConfig, "verdict_radius must be positive");
  if (optimizer.max_iterations < 1 || !(optimizer.huber_delta > 0.0) || !(optimizer.lambda_init > 0.0)) {
    throw Error(ErrorCode::InvalidConfig, "optimizer settings out of range");
  }
}

namespace {

std::string text_of(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return {buf, r.ptr};
}

template <typename T>
T parse_value(const std::string& key, const std::string& text) {
  if constexpr (std::is_same_v<T, bool>) {
    if (text == "true" || text == "1") return true;
    if (text == "false" || text == "0") return false;
  } else {
    T v{};
    const auto r = std::from_chars(text.data(), text.data() + text.size(), v);
    if (r.ec == std::errc() && r.ptr == text.data() + text.size()) return v;
  }
  throw Error(ErrorCode::InvalidConfig, "bad value '" + text + "' for " + key);
}

template <typename T>
std::string format_value(const T& v) {
  if constexpr (std::is_same_v<T, bool>) {
    return v ? "true" : "false";
  } else if constexpr (std::is_floating_point_v<T>) {
    return text_of(v);
  } else {
    return std::to_string(v);
  }
}

struct Entry {
  std::string key;
  std::function<std::string(RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

template <typename Access>
Entry field(std::string key, Access access) {
  using T = std::remove_reference_t<decltype(access(std::declval<RunConfig&>()))>;
  return {key, [access](RunConfig& c) { return format_value<T>(access(c)); },
          [access, key](RunConfig& c, const std::string& v) { access(c) = parse_value<T>(key, v); }};
}

Entry variant_field(std::string key, std::function<IcpConfig&(RunConfig&)> icp) {
  return {key,
          [icp](RunConfig& c) {
            return std::string(icp(c).variant == IcpVariant::PointToPlane ? "point_to_plane" : "point_to_point");
          },
          [icp, key](RunConfig& c, const std::string& v) {
            if (v == "point_to_plane") icp(c).variant = IcpVariant::PointToPlane;
            else if (v == "point_to_point") icp(c).variant = IcpVariant::PointToPoint;
            else throw Error(ErrorCode::InvalidConfig, "bad value '" + v + "' for " + key);
          }};
}

#define MSMAP_FIELD(key, expr) field(key, [](RunConfig& c) -> auto& { return c.expr; })

void icp_fields(std::vector<Entry>& out, const std::string& prefix, IcpConfig& (*icp)(RunConfig&)) {
  out.push_back(field(prefix + ".max_iterations", [icp](RunConfig& c) -> auto& { return icp(c).max_iterations; }));
  out.push_back(field(prefix + ".max_correspondence_initial",
                      [icp](RunConfig& c) -> auto& { return icp(c).max_correspondence_initial; }));
  out.push_back(field(prefix + ".max_correspondence_final",
                      [icp](RunConfig& c) -> auto& { return icp(c).max_correspondence_final; }));
  out.push_back(field(prefix + ".schedule_iterations", [icp](RunConfig& c) -> auto& { return icp(c).schedule_iterations; }));
  out.push_back(field(prefix + ".convergence_epsilon", [icp](RunConfig& c) -> auto& { return icp(c).convergence_epsilon; }));
  out.push_back(variant_field(prefix + ".variant", icp));
  out.push_back(field(prefix + ".trim_ratio", [icp](RunConfig& c) -> auto& { return icp(c).trim_ratio; }));
  out.push_back(field(prefix + ".overlap_distance", [icp](RunConfig& c) -> auto& { return icp(c).overlap_distance; }));
}

const std::vector<Entry>& entries() {
  static const std::vector<Entry> all = [] {
    std::vector<Entry> e{
        MSMAP_FIELD("threads", threads),
        MSMAP_FIELD("slam.submap_translation", slam.submap_translation),
        MSMAP_FIELD("slam.submap_rotation", slam.submap_rotation),
        MSMAP_FIELD("slam.map_voxel", slam.map_voxel),
        MSMAP_FIELD("slam.dynamic_increment", slam.dynamic_increment),
        MSMAP_FIELD("slam.dynamic_cut", slam.dynamic_cut),
        MSMAP_FIELD("slam.free_space_tolerance", slam.free_space_tolerance),
        MSMAP_FIELD("slam.free_space_angular_tolerance", slam.free_space_angular_tolerance),
        MSMAP_FIELD("slam.free_space_margin", slam.free_space_margin),
        MSMAP_FIELD("slam.free_space_relative_margin", slam.free_space_relative_margin),
        MSMAP_FIELD("slam.tracking_min_overlap", slam.tracking_min_overlap),
        MSMAP_FIELD("slam.tracking_source_voxel", slam.tracking_source_voxel),
        MSMAP_FIELD("slam.tracking_target_voxel", slam.tracking_target_voxel),
        MSMAP_FIELD("slam.tracking_keep_radius", slam.tracking_keep_radius),
        MSMAP_FIELD("slam.tracking_refresh_scans", slam.tracking_refresh_scans),
        MSMAP_FIELD("slam.normal_k", slam.normal_k),
        MSMAP_FIELD("slam.tracking_normal_k", slam.tracking_normal_k),
        MSMAP_FIELD("slam.tracking_max_condition", slam.tracking_max_condition),
        MSMAP_FIELD("slam.odometry_sigma_translation", slam.odometry_sigma_translation),
        MSMAP_FIELD("slam.odometry_sigma_rotation", slam.odometry_sigma_rotation),
        MSMAP_FIELD("slam.intra_loop_closure", slam.intra_loop_closure),
        MSMAP_FIELD("slam.drift_yaw", slam.drift_yaw),
        MSMAP_FIELD("slam.drift_translation", slam.drift_translation),
        MSMAP_FIELD("slam.drift_noise_yaw", slam.drift_noise_yaw),
        MSMAP_FIELD("slam.drift_noise_translation", slam.drift_noise_translation),
        MSMAP_FIELD("slam.drift_seed", slam.drift_seed),
    };
    icp_fields(e, "slam.tracking_icp", [](RunConfig& c) -> IcpConfig& { return c.slam.tracking_icp; });
    for (auto&& x : {
             MSMAP_FIELD("loop.proximity_radius", loop.proximity_radius),
             MSMAP_FIELD("loop.min_index_gap", loop.min_index_gap),
             MSMAP_FIELD("loop.min_overlap", loop.min_overlap),
             MSMAP_FIELD("loop.max_prior_translation", loop.max_prior_translation),
             MSMAP_FIELD("loop.max_prior_rotation", loop.max_prior_rotation),
             MSMAP_FIELD("loop.prior_yaw_seeds", loop.prior_yaw_seeds),
             MSMAP_FIELD("loop.blind_yaw_seeds", loop.blind_yaw_seeds),
             MSMAP_FIELD("loop.source_voxel", loop.source_voxel),
             MSMAP_FIELD("loop.normal_k", loop.normal_k),
             MSMAP_FIELD("loop.sigma_floor", loop.sigma_floor),
         }) {
      e.push_back(x);
    }
    icp_fields(e, "loop.icp", [](RunConfig& c) -> IcpConfig& { return c.loop.icp; });
    for (auto&& x : {
             MSMAP_FIELD("optimizer.max_iterations", optimizer.max_iterations),
             MSMAP_FIELD("optimizer.lambda_init", optimizer.lambda_init),
             MSMAP_FIELD("optimizer.huber_delta", optimizer.huber_delta),
             MSMAP_FIELD("optimizer.relative_tolerance", optimizer.relative_tolerance),
             MSMAP_FIELD("descriptor.rings", descriptor.rings),
             MSMAP_FIELD("descriptor.bins", descriptor.bins),
             MSMAP_FIELD("descriptor.max_range", descriptor.max_range),
             MSMAP_FIELD("descriptor.min_elevation_deg", descriptor.min_elevation_deg),
             MSMAP_FIELD("descriptor.max_elevation_deg", descriptor.max_elevation_deg),
             MSMAP_FIELD("descriptor.d_alpha", d_alpha),
             MSMAP_FIELD("vote.gamma", vote.gamma),
             MSMAP_FIELD("vote.n", vote.n),
             MSMAP_FIELD("vote.strict_denominator", vote.strict_denominator),
             MSMAP_FIELD("merge.yaw_seeds", merge_yaw_seeds),
             MSMAP_FIELD("merge.recheck", merge_recheck),
             MSMAP_FIELD("dynamic.d_beta", dynamic.d_beta),
             MSMAP_FIELD("dynamic.grow_distance", dynamic.grow_distance),
             MSMAP_FIELD("dynamic.grow_normal_angle", dynamic.grow_normal_angle),
             MSMAP_FIELD("dynamic.grow_support", dynamic.grow_support),
             MSMAP_FIELD("dynamic.voxel", dynamic.voxel),
             MSMAP_FIELD("dynamic.height_limit", dynamic.height_limit),
             MSMAP_FIELD("dynamic.sensor_height", dynamic.sensor_height),
             MSMAP_FIELD("dynamic.end_margin", dynamic.end_margin),
             MSMAP_FIELD("dynamic.normal_k", dynamic.normal_k),
             MSMAP_FIELD("eval.verdict_radius", verdict_radius),
         }) {
      e.push_back(x);
    }
    return e;
  }();
  return all;
}

#undef MSMAP_FIELD

void flatten(const nlohmann::json& j, const std::string& prefix, std::vector<std::pair<std::string, std::string>>& out) {
  if (j.is_object()) {
    for (const auto& [k, v] : j.items()) flatten(v, prefix.empty() ? k : prefix + "." + k, out);
  } else if (j.is_string()) {
    out.emplace_back(prefix, j.get<std::string>());
  } else if (j.is_boolean()) {
    out.emplace_back(prefix, j.get<bool>() ? "true" : "false");
  } else if (j.is_number_integer() || j.is_number_unsigned()) {
    out.emplace_back(prefix, j.dump());
  } else if (j.is_number_float()) {
    out.emplace_back(prefix, text_of(j.get<double>()));
  } else {
    throw Error(ErrorCode::InvalidConfig, "config key " + prefix + " must be a number, boolean or string");
  }
}

}  // namespace

std::vector<std::pair<std::string, std::string>> config_entries(const RunConfig& cfg) {
  RunConfig copy = cfg;
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& e : entries()) out.emplace_back(e.key, e.get(copy));
  return out;
}

void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value) {
  for (const auto& e : entries()) {
    if (e.key == key) {
      e.set(cfg, value);
      return;
    }
  }
  throw Error(ErrorCode::InvalidConfig, "unknown config key '" + key + "'");
}

void apply_config_file(RunConfig& cfg, const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open config " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ParseError, path.string() + ": " + e.what());
  }
  if (!j.is_object()) throw Error(ErrorCode::ParseError, path.string() + ": top level must be an object");
  std::vector<std::pair<std::string, std::string>> flat;
  flatten(j, "", flat);
  for (const auto& [k, v] : flat) set_config_value(cfg, k, v);
}

void write_timing(const fs::path& path, const Timing& timing) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  char buf[64];
  for (const auto& [k, v] : timing) {
    std::snprintf(buf, sizeof buf, "%.3f", v);
    out << k << ' ' << buf << '\n';
  }
}

// ---- helpers ------------------------------------------------------------------

namespace {

class Stopwatch {
 public:
  double lap() {
    const auto now = std::chrono::steady_clock::now();
    const double s = std::chrono::duration<double>(now - last_).count();
    last_ = now;
    return s;
  }

 private:
  std::chrono::steady_clock::time_point last_ = std::chrono::steady_clock::now();
};

void require_file(const fs::path& p) {
  if (!fs::exists(p)) throw Error(ErrorCode::IoError, "no such file or directory: " + p.string());
}

void ensure_dir(const fs::path& p) {
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec) throw Error(ErrorCode::IoError, "cannot create " + p.string() + ": " + ec.message());
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + p.string());
  out << text;
}

std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + p.string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::string fixed(double v, int digits = 6) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

sim::SimulatedSession load_simulation(const fs::path& dir) {
  const fs::path p = dir / "simulation.bin";
  require_file(p);
  std::ifstream in(p, std::ios::binary);
  return read_simulation(in);
}

std::map<std::string, std::string> parameter_map(const RunConfig& cfg) {
  std::map<std::string, std::string> out;
  for (const auto& [k, v] : config_entries(cfg)) out[k] = v;
  return out;
}

std::uint32_t only_session(const SessionStore& store) {
  const auto ids = store.sessions();
  if (ids.size() != 1) {
    throw Error(ErrorCode::InvalidConfig, store.root().string() + " holds " + std::to_string(ids.size()) +
                                              " sessions; pass --session");
  }
  return ids.front();
}

// Per-stage side files travel with the run so that eval can gather them.
void carry_side_files(const fs::path& from, const fs::path& to) {
  if (!fs::is_directory(from) || fs::equivalent(from, to)) return;
  for (const auto& e : fs::directory_iterator(from)) {
    const std::string n = e.path().filename().string();
    bool carried = false;
    for (const char* prefix : {"timing_", "trajectory_", "verdicts_", "merge_", "dynamics_"}) carried |= n.rfind(prefix, 0) == 0;
    if (carried && e.is_regular_file()) {
      fs::copy_file(e.path(), to / e.path().filename(), fs::copy_options::overwrite_existing);
    }
  }
}

StoredMap load_history(const fs::path& path) {
  require_file(path);
  if (fs::exists(path / "map.json")) return load_map(path);
  const SessionStore store(path);
  StoredMap m;
  m.sessions.push_back(store.load(only_session(store)));
  return m;
}

StoredSession* stored_session(StoredMap& m, std::uint32_t id) {
  for (auto& s : m.sessions) {
    if (s.graph.session == id) return &s;
  }
  return nullptr;
}

Submap* stored_submap(StoredMap& m, const SubmapId& id) {
  StoredSession* s = stored_session(m, id.session);
  if (!s) return nullptr;
  for (auto& sm : s->graph.submaps) {
    if (sm.id == id) return &sm;
  }
  return nullptr;
}

}  // namespace

// ---- simulate ----------------------------------------------------------------------

void cmd_simulate(const SimulateArgs& args) {
  Stopwatch clock;
  require_file(args.trajectory);
  std::ifstream tin(args.trajectory);
  const sim::TrajectorySpec route = sim::parse_trajectory(tin);
  sim::WorldSpec world;
  if (!args.world.empty()) {
    require_file(args.world);
    std::ifstream win(args.world);
    world = sim::parse_world(win);
  } else {
    world = sim::generate_campus(route, args.campus);
  }
  if (args.session < 1 || args.session > world.sessions) {
    throw Error(ErrorCode::InvalidConfig, "session " + std::to_string(args.session) + " outside the world's " +
                                              std::to_string(world.sessions) + " sessions");
  }
  const auto session = sim::generate_session(world, route, args.session);
  const double render = clock.lap();

  ensure_dir(args.out);
  std::ostringstream bin, w, t, truth;
  write_simulation(bin, session);
  sim::write_world(w, world);
  sim::write_trajectory(t, route);
  std::vector<ScanPose> gt;
  for (std::size_t i = 0; i < session.scans.size(); ++i) gt.push_back({session.scans[i].id, session.ground_truth[i]});
  write_poses(truth, gt);
  write_text(args.out / "simulation.bin", bin.str());
  write_text(args.out / "world.txt", w.str());
  write_text(args.out / "trajectory.txt", t.str());
  write_text(args.out / "truth.txt", truth.str());
  write_timing(args.out / "timing_simulate.kv", {{"simulate.render", render}, {"simulate.write", clock.lap()}});
}

// ---- slam ---------------------------------------------------------------------------

void cmd_slam(const SlamArgs& args, const RunConfig& cfg) {
  cfg.validate();
  Stopwatch clock;
  std::vector<Scan> scans;
  std::uint32_t session = 1;
  std::string source;
  if (!args.scans.empty()) {
    auto sim = load_simulation(args.scans);
    scans = std::move(sim.scans);
    session = sim.session;
    source = "simulation";
  } else if (!args.import_file.empty()) {
    require_file(args.import_file);
    require_file(args.import_poses);
    scans = import_cloud_file(args.import_file, args.import_format, args.import_poses).scans;
    source = args.import_format == CloudFormat::AsciiXyz ? "ascii-xyz" : "binary-ply";
  } else {
    throw Error(ErrorCode::InvalidConfig, "slam needs scans or an import file");
  }
  if (args.session) session = *args.session;
  const double load = clock.lap();

  const SessionResult result = run_session(session, scans, cfg.slam_config());
  if (result.error) throw *result.error;
  const double slam = clock.lap();

  StoredSession stored;
  stored.graph = result.graph;
  stored.signatures.config = cfg.descriptor;
  stored.signatures.d_alpha = cfg.d_alpha;
  stored.signatures.signatures = session_signatures(stored.graph, scans, cfg.descriptor);
  stored.parameters = parameter_map(cfg);
  stored.parameters["source"] = source;
  const double describe = clock.lap();

  ensure_dir(args.out);
  SessionStore(args.out).save(stored);
  std::ostringstream traj;
  write_poses(traj, result.trajectory);
  const std::string id = std::to_string(session);
  write_text(args.out / ("trajectory_" + id + ".txt"), traj.str());
  write_timing(args.out / ("timing_slam_" + id + ".kv"),
               {{"slam.load", load}, {"slam.run", slam}, {"slam.signatures", describe}, {"slam.write", clock.lap()}});
}

// ---- merge ----------------------------------------------------------------------------

void cmd_merge(const MergeArgs& args, const RunConfig& cfg) {
  cfg.validate();
  Stopwatch clock;
  StoredMap stored = load_history(args.history);
  require_file(args.new_store);
  const SessionStore store(args.new_store);
  const std::uint32_t id = args.session ? *args.session : only_session(store);
  StoredSession incoming = store.load(id);
  if (!(incoming.signatures.config == stored.sessions.front().signatures.config)) {
    throw Error(ErrorCode::InvalidConfig, "descriptor settings differ between history and new session");
  }
  const double load = clock.lap();

  MultiSessionMap map = stored.map();
  SignatureDatabase db = stored.database();
  db.set_d_alpha(cfg.d_alpha);
  const MergeReport report = merge_new_session(map, db, incoming.graph, incoming.signatures.signatures, cfg.merge_config());
  const double merge = clock.lap();

  for (std::size_t i = 0; i < stored.sessions.size(); ++i) stored.sessions[i].graph = map.sessions[i];
  incoming.graph = map.sessions.back();
  stored.sessions.push_back(std::move(incoming));
  stored.inter_edges = map.inter_edges;

  ensure_dir(args.out);
  save_map(args.out, stored);
  carry_side_files(args.history, args.out);
  carry_side_files(args.new_store, args.out);
  const std::string sid = std::to_string(id);
  write_text(args.out / ("verdicts_" + sid + ".txt"), verdict_report(report.match.verdicts));

  Report r;
  std::size_t matched = 0;
  for (const auto& v : report.match.verdicts) matched += v.kind == VerdictKind::Matched;
  r.emplace_back("merge.session", sid);
  r.emplace_back("merge.submaps", std::to_string(report.match.verdicts.size()));
  r.emplace_back("merge.matched_submaps", std::to_string(matched));
  r.emplace_back("merge.candidates", std::to_string(report.match.candidates.size()));
  r.emplace_back("merge.recheck_candidates", std::to_string(report.recheck_candidates.size()));
  r.emplace_back("merge.inter_edges", std::to_string(report.inter_edges.size()));
  r.emplace_back("merge.optimizer_iterations", std::to_string(report.optimization.iterations));
  r.emplace_back("merge.optimizer_cost", report.optimization.cost_trace.empty() ? "-" : fixed(report.optimization.cost_trace.back()));
  for (std::size_t i = 0; i < report.validations.size(); ++i) {
    const auto& c = report.match.candidates[i];
    const auto& v = report.validations[i];
    r.emplace_back("candidate." + to_string(c.current) + "->" + to_string(c.history),
                   v.edge ? "accepted overlap=" + fixed(v.icp.overlap_ratio, 4) : "rejected " + v.reason);
  }
  for (std::size_t i = 0; i < report.recheck_validations.size(); ++i) {
    const auto& c = report.recheck_candidates[i];
    r.emplace_back("recheck." + to_string(c.current) + "->" + to_string(c.history),
                   report.recheck_validations[i].edge ? "accepted" : "rejected " + report.recheck_validations[i].reason);
  }
  write_text(args.out / ("merge_" + sid + ".txt"), format_key_values(r));
  write_timing(args.out / ("timing_merge_" + sid + ".kv"), {{"merge.load", load}, {"merge.run", merge}, {"merge.write", clock.lap()}});
}

// ---- detect-dynamics ------------------------------------------------------------------------

void cmd_detect(const DetectArgs& args, const RunConfig& cfg) {
  cfg.validate();
  Stopwatch clock;
  require_file(args.map);
  StoredMap stored = load_map(args.map);
  if (stored.sessions.size() < 2) throw Error(ErrorCode::InvalidConfig, "detect-dynamics needs a merged map");
  const std::uint32_t id = args.session ? *args.session : stored.sessions.back().graph.session;
  if (!stored_session(stored, id)) throw Error(ErrorCode::MissingSession, "session " + std::to_string(id) + " not in map");
  std::set<std::uint32_t> earlier;
  for (const auto& s : stored.sessions) {
    if (s.graph.session == id) break;
    earlier.insert(s.graph.session);
  }
  const double load = clock.lap();

  struct Touched {
    std::size_t original_size = 0;
    std::set<std::uint32_t> dynamic;
  };
  std::map<SubmapId, Touched> touched;
  Report pairs;
  std::size_t pair_count = 0;
  for (const auto& e : stored.inter_edges) {
    SubmapId cur, his;
    Pose align;  // history frame -> current frame
    if (e.from.session == id && earlier.contains(e.to.session)) {
      cur = e.from;
      his = e.to;
      align = e.measurement;
    } else if (e.to.session == id && earlier.contains(e.from.session)) {
      cur = e.to;
      his = e.from;
      align = e.measurement.inverse();
    } else {
      continue;
    }
    const Submap* c = stored_submap(stored, cur);
    Submap* h = stored_submap(stored, his);
    if (!c || !h) throw Error(ErrorCode::CorruptManifest, "inter edge names a missing submap");
    auto& t = touched[his];
    if (t.dynamic.empty() && t.original_size == 0) t.original_size = h->cloud.size();
    const auto part = partition(*c, *h, align, cfg.dynamic);
    const auto labels = detect_dynamics(part, *c, *h, align, cfg.dynamic);
    *h = update_history_submap(*h, labels, *c, align);
    // points mended in by an earlier pair are not part of the original scan data
    for (auto i : labels.dynamic) {
      if (i < t.original_size) t.dynamic.insert(i);
    }
    ++pair_count;
    pairs.emplace_back("pair." + to_string(cur) + "->" + to_string(his),
                       "dynamic=" + std::to_string(labels.dynamic.size()) + " mend=" + std::to_string(labels.mend.size()) +
                           " symmetric=" + std::to_string(labels.symmetric.size()));
  }
  const double detect = clock.lap();

  ensure_dir(args.out);
  save_map(args.out, stored);
  carry_side_files(args.map, args.out);
  Report r;
  r.emplace_back("detect.session", std::to_string(id));
  r.emplace_back("detect.pairs", std::to_string(pair_count));
  r.insert(r.end(), pairs.begin(), pairs.end());
  for (const auto& [sid, t] : touched) {
    std::string ids;
    for (auto i : t.dynamic) ids += (ids.empty() ? "" : ",") + std::to_string(i);
    r.emplace_back("dynamic." + to_string(sid), "size=" + std::to_string(t.original_size) + " ids=" + (ids.empty() ? "-" : ids));
  }
  const std::string sid = std::to_string(id);
  write_text(args.out / ("dynamics_" + sid + ".txt"), format_key_values(r));

  ensure_dir(args.out / "ply");
  for (const auto& [hid, t] : touched) {
    const Submap* h = stored_submap(stored, hid);
    std::vector<std::uint8_t> labels(h->cloud.size(), 0);
    for (std::size_t i = t.original_size; i < labels.size(); ++i) labels[i] = h->cloud.live[i] ? 2 : 1;
    for (auto i : t.dynamic) labels[i] = 1;
    std::ostringstream ply;
    write_labeled_ply(ply, h->cloud, labels);
    write_text(args.out / "ply" / ("submap_" + std::to_string(hid.session) + "_" + std::to_string(hid.index) + ".ply"), ply.str());
  }
  write_timing(args.out / ("timing_detect_" + sid + ".kv"), {{"detect.load", load}, {"detect.run", detect}, {"detect.write", clock.lap()}});
}

// ---- eval ---------------------------------------------------------------------------------

namespace {

struct DynamicRecord {
  SubmapId submap;
  std::size_t size = 0;
  std::vector<std::uint32_t> ids;
};

std::vector<DynamicRecord> read_dynamics(const fs::path& p) {
  std::vector<DynamicRecord> out;
  std::istringstream in(read_text(p));
  std::string key, a, b;
  std::size_t line = 0;
  std::string raw;
  while (std::getline(in, raw)) {
    ++line;
    if (raw.rfind("dynamic.", 0) != 0) continue;
    std::istringstream f(raw);
    if (!(f >> key >> a >> b) || a.rfind("size=", 0) != 0 || b.rfind("ids=", 0) != 0) {
      throw Error(ErrorCode::ParseError, p.string() + " line " + std::to_string(line) + ": malformed dynamic record");
    }
    DynamicRecord r;
    try {
      r.submap = parse_submap_id(key.substr(8));
      r.size = std::stoul(a.substr(5));
      if (b != "ids=-") {
        std::istringstream ids(b.substr(4));
        std::string tok;
        while (std::getline(ids, tok, ',')) r.ids.push_back(std::uint32_t(std::stoul(tok)));
      }
    } catch (const std::logic_error&) {
      throw Error(ErrorCode::ParseError, p.string() + " line " + std::to_string(line) + ": malformed dynamic record");
    }
    for (auto i : r.ids) {
      if (i >= r.size) {
        throw Error(ErrorCode::ParseError, p.string() + " line " + std::to_string(line) + ": id " + std::to_string(i) +
                                               " beyond size " + std::to_string(r.size));
      }
    }
    out.push_back(std::move(r));
  }
  return out;
}

void add_error(Report& r, const std::string& prefix, const TrajectoryError& e) {
  r.emplace_back(prefix + ".count", std::to_string(e.count));
  r.emplace_back(prefix + ".rms", fixed(e.rms));
  r.emplace_back(prefix + ".mean", fixed(e.mean));
  r.emplace_back(prefix + ".max", fixed(e.max));
}

std::string svg_plot(const std::vector<std::pair<std::string, std::vector<Vec3>>>& lines) {
  double lo_x = 1e300, lo_y = 1e300, hi_x = -1e300, hi_y = -1e300;
  for (const auto& [name, pts] : lines) {
    for (const auto& p : pts) {
      lo_x = std::min(lo_x, p.x());
      hi_x = std::max(hi_x, p.x());
      lo_y = std::min(lo_y, p.y());
      hi_y = std::max(hi_y, p.y());
    }
  }
  if (lo_x > hi_x) lo_x = hi_x = lo_y = hi_y = 0.0;
  const double pad = 5.0, scale = 4.0;
  const double w = (hi_x - lo_x + 2 * pad) * scale, h = (hi_y - lo_y + 2 * pad) * scale;
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};
  std::string s = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + fixed(w, 1) + "\" height=\"" + fixed(h, 1) + "\">\n";
  for (std::size_t i = 0; i < lines.size(); ++i) {
    s += "<polyline fill=\"none\" stroke=\"" + std::string(colors[(i / 2) % 6]) + "\" stroke-width=\"1\"";
    if (i % 2 == 1) s += " stroke-dasharray=\"4 3\"";
    s += " data-name=\"" + lines[i].first + "\" points=\"";
    for (const auto& p : lines[i].second) {
      s += fixed((p.x() - lo_x + pad) * scale, 2) + "," + fixed((hi_y - p.y() + pad) * scale, 2) + " ";
    }
    s += "\"/>\n";
  }
  s += "</svg>\n";
  return s;
}

}  // namespace

void cmd_eval(const EvalArgs& args, const RunConfig& cfg) {
  cfg.validate();
  Stopwatch clock;
  require_file(args.run);
  const StoredMap stored = load_map(args.run);
  std::map<std::uint32_t, std::vector<Pose>> truth;
  std::optional<sim::WorldSpec> world;
  for (const auto& dir : args.truth) {
    auto s = load_simulation(dir);
    std::vector<Pose> by_id;
    for (std::size_t i = 0; i < s.scans.size(); ++i) {
      if (s.scans[i].id >= by_id.size()) by_id.resize(s.scans[i].id + 1);
      by_id[s.scans[i].id] = s.ground_truth[i];
    }
    truth[s.session] = std::move(by_id);
    if (!world && fs::exists(dir / "world.txt")) {
      std::ifstream win(dir / "world.txt");
      world = sim::parse_world(win);
    }
  }
  const auto& first = stored.sessions.front().graph;
  if (!truth.contains(first.session)) throw Error(ErrorCode::InvalidConfig, "no truth for session " + std::to_string(first.session));
  if (first.submaps.empty() || first.submaps.front().scan_poses.empty()) throw Error(ErrorCode::InvalidConfig, "empty first session");
  // world pose of the map frame, from the first session's first scan
  const Submap& s0 = first.submaps.front();
  const Pose world_from_map =
      truth[first.session].at(s0.scan_poses.front().scan_id) * (s0.origin * s0.scan_poses.front().pose).inverse();
  const double load = clock.lap();

  Report r;
  r.emplace_back("run.sessions", std::to_string(stored.sessions.size()));
  r.emplace_back("run.inter_edges", std::to_string(stored.inter_edges.size()));
  std::vector<std::pair<std::string, std::vector<Vec3>>> plot;
  std::map<std::uint32_t, VerdictTable> tables;
  for (const auto& st : stored.sessions) {
    const auto& g = st.graph;
    const std::string p = "session." + std::to_string(g.session);
    r.emplace_back(p + ".submaps", std::to_string(g.submaps.size()));
    const auto t = truth.find(g.session);
    if (t == truth.end()) continue;
    const auto traj = session_trajectory(g);
    if (traj.size() >= 3) add_error(r, p + ".ate", absolute_trajectory_error(traj, t->second));
    std::vector<Pose> in_map;
    for (const auto& pose : t->second) in_map.push_back(world_from_map.inverse() * pose);
    add_error(r, p + ".map_frame_error", trajectory_error_in_frame(traj, in_map));
    // submap origins against truth, through each submap's first scan
    double worst = 0.0;
    for (const auto& sm : g.submaps) {
      if (sm.scan_poses.empty()) continue;
      const Vec3 est = (sm.origin * sm.scan_poses.front().pose).translation();
      worst = std::max(worst, (est - in_map.at(sm.scan_poses.front().scan_id).translation()).norm());
    }
    r.emplace_back(p + ".origin_error_max", fixed(worst));
    std::vector<Vec3> est_line, true_line;
    for (const auto& sp : traj) {
      est_line.push_back(sp.pose.translation());
      true_line.push_back(in_map.at(sp.scan_id).translation());
    }
    plot.emplace_back("estimate " + std::to_string(g.session), est_line);
    plot.emplace_back("truth " + std::to_string(g.session), true_line);

    const fs::path vpath = args.run / ("verdicts_" + std::to_string(g.session) + ".txt");
    if (fs::exists(vpath)) {
      std::istringstream vin(read_text(vpath));
      const auto verdicts = parse_verdict_report(vin);
      std::map<SubmapId, const Submap*> index;
      for (const auto& s : stored.sessions) {
        for (const auto& m : s.graph.submaps) index.emplace(m.id, &m);
      }
      const VerdictTable vt = score_verdicts(verdicts, index, truth, cfg.verdict_radius);
      tables[g.session] = vt;
      r.emplace_back(p + ".verdicts.total", std::to_string(vt.total));
      r.emplace_back(p + ".verdicts.correctly_matched", std::to_string(vt.correct));
      r.emplace_back(p + ".verdicts.undefined", std::to_string(vt.undefined));
      r.emplace_back(p + ".verdicts.wrongly_matched", std::to_string(vt.wrong));
    }

    const fs::path dpath = args.run / ("dynamics_" + std::to_string(g.session) + ".txt");
    if (fs::exists(dpath) && world) {
      DynamicScore total;
      for (const auto& rec : read_dynamics(dpath)) {
        const StoredSession* hs = nullptr;
        for (const auto& s : stored.sessions) {
          if (s.graph.session == rec.submap.session) hs = &s;
        }
        const Submap* h = hs ? hs->graph.find(rec.submap) : nullptr;
        if (!h || rec.size > h->cloud.size()) throw Error(ErrorCode::InvalidConfig, "dynamic record for unknown submap");
        // the submap as it was before detection
        Submap before;
        before.cloud.points.assign(h->cloud.points.begin(), h->cloud.points.begin() + long(rec.size));
        before.cloud.live.assign(h->cloud.live.begin(), h->cloud.live.begin() + long(rec.size));
        for (auto i : rec.ids) before.cloud.live.at(i) = 1;
        accumulate(total, score_dynamics(before, rec.ids, world_from_map * h->origin, *world, rec.submap.session,
                                         g.session, cfg.dynamic.height_limit));
      }
      r.emplace_back(p + ".dynamic.positives", std::to_string(total.positives));
      r.emplace_back(p + ".dynamic.true_positives", std::to_string(total.true_positives));
      r.emplace_back(p + ".dynamic.recall", fixed(total.recall()));
      r.emplace_back(p + ".dynamic.precision", fixed(total.precision()));
      r.emplace_back(p + ".dynamic.low_false_positive_rate", fixed(total.low_false_positive_rate()));
      r.emplace_back(p + ".dynamic.removals_above_limit", std::to_string(total.high_removals));
    }
  }
  const double eval = clock.lap();

  ensure_dir(args.out);
  write_text(args.out / "report.kv", format_key_values(r));
  std::string human = "evaluation of " + fs::path(args.run).filename().string() + "\n\n";
  for (const auto& [session, vt] : tables) {
    human += "verdicts, session " + std::to_string(session) + "\n" + format_verdict_table(vt) + "\n";
  }
  std::size_t width = 0;
  for (const auto& [k, v] : r) width = std::max(width, k.size());
  for (const auto& [k, v] : r) human += k + std::string(width + 2 - k.size(), ' ') + v + "\n";
  write_text(args.out / "report.txt", human);
  write_text(args.out / "trajectories.svg", svg_plot(plot));

  // map snapshot: live points of every submap in the map frame, 0.2 m grid
  PointCloud snapshot;
  std::vector<std::uint8_t> session_of;
  VoxelSet seen;
  for (const auto& st : stored.sessions) {
    for (const auto& sm : st.graph.submaps) {
      for (auto i : live_ids(sm.cloud)) {
        const Vec3f p = sm.origin.apply(sm.cloud.points[i]);
        if (!seen.insert(voxel_of(p, 0.2)).second) continue;
        snapshot.push_back(p);
        session_of.push_back(std::uint8_t(std::min<std::uint32_t>(st.graph.session, 255)));
      }
    }
  }
  std::ostringstream ply;
  write_labeled_ply(ply, snapshot, session_of);
  write_text(args.out / "map.ply", ply.str());

  Timing timing;
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(args.run)) {
    const std::string n = e.path().filename().string();
    if (n.rfind("timing_", 0) == 0) files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  for (const auto& f : files) {
    std::istringstream in(read_text(f));
    std::string k;
    double v;
    while (in >> k >> v) timing.emplace_back(k, v);
  }
  timing.emplace_back("eval.load", load);
  timing.emplace_back("eval.run", eval);
  timing.emplace_back("eval.write", clock.lap());
  write_timing(args.out / "timing.kv", timing);
}

}  // namespace msmap
