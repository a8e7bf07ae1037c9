#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "json.hpp"

namespace obslake {

// Desk-scale reproduction of the reference evaluation: workload generation,
// bulk dimension import, streamed observation ingestion, storage footprint,
// and cold-cache per-problem latencies for
//   Q1  SRM output view reconstruction
//   Q2  column-wise behavioral clustering
//   Q3  full three-table join
// "Cold" means a fresh lakehouse handle per repetition; the engine keeps no
// in-process caches. OS page cache eviction is not portable and is not
// attempted.

struct BenchConfig {
  int problems = 50;
  uint64_t seed = 42;
  int repetitions = 10;
  size_t batch_rows = 65536;
  std::filesystem::path work_dir;  // holds workload/ and lakehouse/
  bool contention = false;         // optional 2-writer commit contention section
  bool kernels = true;             // serial vs parallel kernel comparison
  int contention_commits = 100;    // per writer
};

struct BenchReport {
  nlohmann::json doc;
  std::string human;
};

BenchReport run_benchmark(const BenchConfig& config);

}  // namespace obslake
