// msmap: command-line front end.
//   msmap simulate | slam | merge | detect-dynamics | eval
// Exit codes: 0 ok, 1 domain error, 2 usage error.

#include <CLI11.hpp>
#include <cstdio>
#include <iostream>

#include "msmap/error.hpp"
#include "msmap/parallel.hpp"
#include "msmap/pipeline.hpp"

namespace {

constexpr int kOk = 0;
constexpr int kDomainError = 1;
constexpr int kUsageError = 2;

struct Usage : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::optional<std::uint32_t> optional_session(long long v) {
  if (v < 0) return std::nullopt;
  return std::uint32_t(v);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-session lidar mapping with low-dynamic change detection"};
  app.require_subcommand(1);
  std::string config_path;
  std::vector<std::string> overrides;
  long long threads = -1;
  app.add_option("--config", config_path, "JSON config file")->check(CLI::ExistingFile);
  app.add_option("--set", overrides, "override one config key, key=value (repeatable)");
  app.add_option("--threads", threads, "worker threads, 0 = all cores")->check(CLI::NonNegativeNumber);

  msmap::SimulateArgs sim;
  std::uint32_t sim_session = 1;
  auto* simulate = app.add_subcommand("simulate", "render a session from a world and a trajectory");
  simulate->add_option("--trajectory", sim.trajectory, "trajectory file")->required();
  simulate->add_option("--world", sim.world, "world file; omitted: generate a campus around the route");
  simulate->add_option("--session", sim_session, "session to render (1-based)");
  simulate->add_option("--seed", sim.campus.seed, "campus seed");
  simulate->add_option("--sessions", sim.campus.sessions, "campus session count");
  simulate->add_option("--clusters", sim.campus.relocated_clusters, "campus parked-car clusters");
  simulate->add_option("--movers", sim.campus.movers_per_session, "campus moving objects per session");
  simulate->add_option("--out", sim.out, "output directory")->required();

  msmap::SlamArgs slam;
  std::string import_format = "xyz";
  long long slam_session = -1;
  auto* slam_cmd = app.add_subcommand("slam", "single-session SLAM into a session store");
  auto* scans_opt = slam_cmd->add_option("--scans", slam.scans, "simulate output directory");
  auto* import_opt = slam_cmd->add_option("--import", slam.import_file, "point file in a common frame");
  slam_cmd->add_option("--format", import_format, "import format")->check(CLI::IsMember({"xyz", "ply"}));
  slam_cmd->add_option("--poses", slam.import_poses, "sensor pose per scan, for --import");
  slam_cmd->add_option("--session", slam_session, "session id (default: from the input, or 1)");
  slam_cmd->add_option("--out", slam.out, "session store directory")->required();
  scans_opt->excludes(import_opt);

  msmap::MergeArgs merge;
  long long merge_session = -1;
  auto* merge_cmd = app.add_subcommand("merge", "merge a new session into a map");
  merge_cmd->add_option("--history", merge.history, "map directory or single-session store")->required();
  merge_cmd->add_option("--new", merge.new_store, "session store of the new session")->required();
  merge_cmd->add_option("--session", merge_session, "new session id, when the store holds several");
  merge_cmd->add_option("--out", merge.out, "output map directory")->required();

  msmap::DetectArgs detect;
  long long detect_session = -1;
  auto* detect_cmd = app.add_subcommand("detect-dynamics", "label and remove low-dynamic objects in history submaps");
  detect_cmd->add_option("--map", detect.map, "merged map directory")->required();
  detect_cmd->add_option("--session", detect_session, "current session (default: last merged)");
  detect_cmd->add_option("--out", detect.out, "output map directory")->required();

  msmap::EvalArgs eval;
  auto* eval_cmd = app.add_subcommand("eval", "score a run against simulated ground truth");
  eval_cmd->add_option("--run", eval.run, "map directory")->required();
  eval_cmd->add_option("--truth", eval.truth, "simulate output directories")->required();
  eval_cmd->add_option("--out", eval.out, "report directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kUsageError;
  }

  msmap::RunConfig cfg;
  try {
    if (!config_path.empty()) msmap::apply_config_file(cfg, config_path);
    for (const auto& kv : overrides) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos || eq == 0) throw Usage("--set expects key=value, got '" + kv + "'");
      msmap::set_config_value(cfg, kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (threads >= 0) cfg.threads = unsigned(threads);
    cfg.validate();
  } catch (const Usage& e) {
    std::fprintf(stderr, "msmap: %s\n", e.what());
    return kUsageError;
  } catch (const msmap::Error& e) {
    std::fprintf(stderr, "msmap: %s\n", e.what());
    // a bad key or value is the caller's mistake; an unreadable file is not
    return e.code() == msmap::ErrorCode::InvalidConfig ? kUsageError : kDomainError;
  }
  msmap::set_max_threads(cfg.threads);

  try {
    if (*simulate) {
      sim.session = sim_session;
      msmap::cmd_simulate(sim);
    } else if (*slam_cmd) {
      if (slam.scans.empty() && slam.import_file.empty()) {
        std::fprintf(stderr, "msmap slam: one of --scans or --import is required\n");
        return kUsageError;
      }
      if (!slam.import_file.empty() && slam.import_poses.empty()) {
        std::fprintf(stderr, "msmap slam: --import needs --poses\n");
        return kUsageError;
      }
      slam.import_format = import_format == "ply" ? msmap::CloudFormat::BinaryPly : msmap::CloudFormat::AsciiXyz;
      slam.session = optional_session(slam_session);
      msmap::cmd_slam(slam, cfg);
    } else if (*merge_cmd) {
      merge.session = optional_session(merge_session);
      msmap::cmd_merge(merge, cfg);
    } else if (*detect_cmd) {
      detect.session = optional_session(detect_session);
      msmap::cmd_detect(detect, cfg);
    } else if (*eval_cmd) {
      msmap::cmd_eval(eval, cfg);
    }
  } catch (const msmap::Error& e) {
    std::fprintf(stderr, "msmap: %s\n", e.what());
    return kDomainError;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "msmap: %s\n", e.what());
    return kDomainError;
  }
  return kOk;
}
