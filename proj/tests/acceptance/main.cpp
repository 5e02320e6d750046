// Acceptance run: one PASS/FAIL line per criterion.
//   msmap_acceptance            all criteria
//   msmap_acceptance 2 7        selected ones

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <set>

#include "acceptance.hpp"

int main(int argc, char** argv) {
  using namespace acceptance;
  struct Criterion {
    int number;
    const char* name;
    Outcome (*run)();
  };
  const Criterion all[] = {
      {1, "geometry properties", geometry},
      {2, "icp recovery", icp_recovery},
      {3, "pose graph", pose_graph},
      {4, "loop with drift", loop_with_drift},
      {5, "descriptor", descriptor},
      {6, "voting", voting},
      {7, "merge", merge},
      {8, "dynamic detection", dynamics},
      {9, "persistence", persistence},
      {10, "determinism", determinism},
  };
  std::set<int> chosen;
  for (int i = 1; i < argc; ++i) chosen.insert(std::atoi(argv[i]));

  int failed = 0;
  for (const auto& c : all) {
    if (!chosen.empty() && !chosen.contains(c.number)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("criterion %2d %-20s %s  (%.1f s) %s\n", c.number, c.name, o.pass ? "PASS" : "FAIL", s, o.detail.c_str());
    std::fflush(stdout);
    failed += !o.pass;
  }
  return failed ? 1 : 0;
}
