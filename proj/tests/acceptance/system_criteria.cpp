#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "../scenarios.hpp"
#include "acceptance.hpp"
#include "msmap/error.hpp"
#include "msmap/persistence.hpp"
#include "msmap/pipeline.hpp"

namespace acceptance {

using namespace msmap;
namespace fs = std::filesystem;

namespace {

struct Scratch {
  fs::path path;
  explicit Scratch(const std::string& name) : path(fs::temp_directory_path() / ("msmap_acceptance_" + name)) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~Scratch() { fs::remove_all(path); }
};

std::string bytes_of(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void put_bytes(const fs::path& p, const std::string& b) { std::ofstream(p, std::ios::binary | std::ios::trunc) << b; }

// Relative path -> contents for every file under `root`, timing files excluded.
std::map<std::string, std::string> tree_of(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (!e.is_regular_file()) continue;
    const std::string rel = fs::relative(e.path(), root).string();
    if (e.path().filename().string().rfind("timing", 0) == 0) continue;
    out[rel] = bytes_of(e.path());
  }
  return out;
}

template <typename F>
std::string error_name(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return std::string(to_string(e.code()));
  }
  return "none";
}

}  // namespace

Outcome persistence() {
  const LoopRun& run = loop_run();
  StoredMap map;
  for (std::size_t i = 0; i < run.map.sessions.size(); ++i) {
    StoredSession s;
    s.graph = run.map.sessions[i];
    s.signatures.signatures = i == 0 ? run.sig1 : run.sig2;
    for (const auto& [k, v] : config_entries(RunConfig{})) s.parameters[k] = v;
    map.sessions.push_back(std::move(s));
  }
  map.inter_edges = run.map.inter_edges;

  Scratch a("persist_a"), b("persist_b"), c("persist_c");
  save_map(a.path, map);
  const StoredMap back = load_map(a.path);
  const bool equal = back == map;
  save_map(b.path, back);
  const bool same_bytes = tree_of(a.path) == tree_of(b.path);

  // each corruption on a fresh copy
  std::vector<std::pair<std::string, std::string>> cases;  // what, expected/actual
  auto corrupt = [&](const std::string& what, const std::string& expected, auto&& damage) {
    fs::remove_all(c.path);
    fs::copy(a.path, c.path, fs::copy_options::recursive);
    damage(c.path);
    const std::string got = error_name([&] { load_map(c.path); });
    cases.emplace_back(what, got == expected ? "" : expected + " got " + got);
  };
  const fs::path sub = fs::path("session_2") / "submaps" / "3.bin";
  corrupt("flipped byte", "ChecksumMismatch", [&](const fs::path& r) {
    std::string s = bytes_of(r / sub);
    s[s.size() / 2] ^= 0x40;
    put_bytes(r / sub, s);
  });
  corrupt("truncated graph", "ChecksumMismatch", [&](const fs::path& r) {
    const std::string s = bytes_of(r / "session_1" / "graph.txt");
    put_bytes(r / "session_1" / "graph.txt", s.substr(0, s.size() / 2));
  });
  corrupt("garbled manifest", "CorruptManifest",
          [&](const fs::path& r) { put_bytes(r / "session_1" / "manifest.json", "{\"format\": "); });
  corrupt("missing listed file", "CorruptManifest", [&](const fs::path& r) { fs::remove(r / sub); });
  corrupt("missing session", "MissingSession", [&](const fs::path& r) { fs::remove_all(r / "session_2"); });
  corrupt("missing map", "MissingSession", [&](const fs::path& r) { fs::remove(r / "map.json"); });
  corrupt("edited inter edges", "ChecksumMismatch",
          [&](const fs::path& r) { put_bytes(r / "inter_edges.txt", bytes_of(r / "inter_edges.txt") + "#\n"); });
  corrupt("bad magic behind a valid checksum", "ParseError", [&](const fs::path& r) {
    std::string s = bytes_of(r / sub);
    s[0] = 'X';
    put_bytes(r / sub, s);
    auto m = nlohmann::ordered_json::parse(bytes_of(r / "session_2" / "manifest.json"));
    for (auto& f : m["files"]) {
      if (f["name"] == "submaps/3.bin") f["crc32"] = crc32_of(s);
    }
    put_bytes(r / "session_2" / "manifest.json", m.dump(2) + "\n");
  });

  std::string failures;
  for (const auto& [what, problem] : cases) {
    if (!problem.empty()) failures += " [" + what + ": " + problem + "]";
  }
  std::size_t points = 0;
  for (const auto& s : map.sessions) {
    for (const auto& m : s.graph.submaps) points += m.cloud.size();
  }
  return {equal && same_bytes && failures.empty(),
          format("round trip %s, re-save %s, %zu points, %zu corruption cases%s", equal ? "exact" : "DIFFERS",
                 same_bytes ? "byte-identical" : "DIFFERS", points, cases.size(), failures.c_str())};
}

// The whole command chain twice, into separate directories.
Outcome determinism() {
  Scratch work("determinism");
  const fs::path d = work.path;
  const auto route = msmap::testing::straight(120.0);
  auto revisit = route;
  revisit.start_offset = 0.5;
  {
    std::ofstream a(d / "route.txt"), b(d / "revisit.txt");
    sim::write_trajectory(a, route);
    sim::write_trajectory(b, revisit);
  }
  auto pipeline = [&](const std::string& name) {
    const fs::path r = d / name;
    const RunConfig cfg;
    SimulateArgs first{{}, d / "route.txt", 1, {}, r / "sim1"};
    first.campus.relocated_clusters = 1;
    first.campus.movers_per_session = 1;
    cmd_simulate(first);
    cmd_simulate({r / "sim1" / "world.txt", d / "revisit.txt", 2, {}, r / "sim2"});
    cmd_slam({r / "sim1", {}, CloudFormat::AsciiXyz, {}, std::nullopt, r / "store1"}, cfg);
    cmd_slam({r / "sim2", {}, CloudFormat::AsciiXyz, {}, std::nullopt, r / "store2"}, cfg);
    cmd_merge({r / "store1", r / "store2", std::nullopt, r / "map"}, cfg);
    cmd_detect({r / "map", std::nullopt, r / "detected"}, cfg);
    cmd_eval({r / "detected", {r / "sim1", r / "sim2"}, r / "eval"}, cfg);
    return r;
  };
  const fs::path a = pipeline("a"), b = pipeline("b");
  const auto ta = tree_of(a), tb = tree_of(b);
  std::size_t differing = 0;
  for (const auto& [k, v] : ta) differing += !tb.contains(k) || tb.at(k) != v;
  differing += tb.size() - std::min(tb.size(), ta.size());
  const bool reports = bytes_of(a / "eval" / "report.kv") == bytes_of(b / "eval" / "report.kv") &&
                       bytes_of(a / "eval" / "report.txt") == bytes_of(b / "eval" / "report.txt");
  return {reports && differing == 0,
          format("reports %s; %zu files compared, %zu differ", reports ? "byte-identical" : "DIFFER", ta.size(),
                 differing)};
}

}  // namespace acceptance
