#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "msmap/dynamic_detection.hpp"
#include "msmap/multi_session.hpp"
#include "msmap/persistence.hpp"
#include "msmap/place_descriptor.hpp"
#include "msmap/submap_pipeline.hpp"

namespace msmap {

/// Every tunable of a run. The loop-closure and optimizer sections are shared
/// by single-session SLAM and the merge.
struct RunConfig {
  SlamConfig slam;
  LoopClosureConfig loop;
  OptimizerConfig optimizer;
  DescriptorConfig descriptor;
  double d_alpha = 0.35;
  VoteConfig vote;
  int merge_yaw_seeds = 12;
  bool merge_recheck = true;
  DynamicConfig dynamic;
  double verdict_radius = 10.0;  // eval: true scan distance for a correct match
  unsigned threads = 0;          // 0: all cores

  SlamConfig slam_config() const;
  MergeConfig merge_config() const;
  /// Throws InvalidConfig.
  void validate() const;
};

/// Dotted keys (e.g. `slam.submap_translation`) with their current values in
/// canonical text form, in a fixed order.
std::vector<std::pair<std::string, std::string>> config_entries(const RunConfig& cfg);
/// Sets one key from text. Throws InvalidConfig for an unknown key or a value
/// of the wrong type.
void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value);
/// JSON object, nested or with dotted keys. Throws ParseError / InvalidConfig.
void apply_config_file(RunConfig& cfg, const std::filesystem::path& path);

/// Wall-clock seconds per stage; written apart from reports so that reports
/// stay byte-identical between runs.
using Timing = std::vector<std::pair<std::string, double>>;
void write_timing(const std::filesystem::path& path, const Timing& timing);

// ---- commands -------------------------------------------------------------------
// Each returns normally on success and throws msmap::Error otherwise.

struct SimulateArgs {
  std::filesystem::path world;       // empty: generate a campus around the route
  std::filesystem::path trajectory;
  std::uint32_t session = 1;
  sim::CampusOptions campus;
  std::filesystem::path out;
};
/// Writes <out>/simulation.bin, world.txt, trajectory.txt, truth.txt.
void cmd_simulate(const SimulateArgs& args);

struct SlamArgs {
  std::filesystem::path scans;  // a simulate output directory
  std::filesystem::path import_file;
  CloudFormat import_format = CloudFormat::AsciiXyz;
  std::filesystem::path import_poses;
  std::optional<std::uint32_t> session;
  std::filesystem::path out;  // session store root
};
/// Runs the front end and intra-session loop closure, stores the session
/// with its signatures, and writes trajectory_<id>.txt.
void cmd_slam(const SlamArgs& args, const RunConfig& cfg);

struct MergeArgs {
  std::filesystem::path history;  // map directory or single-session store
  std::filesystem::path new_store;
  std::optional<std::uint32_t> session;
  std::filesystem::path out;  // map directory
};
/// Writes the merged map plus verdicts_<id>.txt and merge_<id>.txt.
void cmd_merge(const MergeArgs& args, const RunConfig& cfg);

struct DetectArgs {
  std::filesystem::path map;
  std::optional<std::uint32_t> session;  // default: last merged session
  std::filesystem::path out;
};
/// Dynamic detection over every inter-session edge of the session, in edge
/// order; history submaps are updated in place. Writes the updated map,
/// dynamics_<id>.txt and labeled PLY snapshots under ply/.
void cmd_detect(const DetectArgs& args, const RunConfig& cfg);

struct EvalArgs {
  std::filesystem::path run;                 // map directory
  std::vector<std::filesystem::path> truth;  // simulate output directories
  std::filesystem::path out;
};
/// Writes report.txt (human), report.kv (records), timing.kv, and plots
/// (trajectories.svg, map.ply).
void cmd_eval(const EvalArgs& args, const RunConfig& cfg);

}  // namespace msmap
