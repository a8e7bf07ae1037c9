#pragma once

#include <cstdint>
#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

#include "json.hpp"

namespace obslake {

// Synthetic workload matching the published corpus densities: ~26.29
// implementations and ~188.9 call sequences per problem, ~88.99 invocations
// per sequence. Each problem plants a configurable number of behavioral
// equivalence classes so clustering has recoverable ground truth.

struct WorkloadDensity {
  double implementations_per_problem = 26.29;
  double sequences_per_problem = 188.9;
  double steps_per_sequence = 88.99;
  int equivalence_classes = 3;
};

struct ProblemPlan {
  std::string problem_id;
  int implementations = 0;
  int tests = 0;
  std::vector<int> class_of_impl;   // implementation index -> class
  std::vector<int> class_sizes;     // descending
  std::vector<int> steps_per_test;  // shared by all implementations of a test
};

struct WorkloadPlan {
  std::string data_set_id;
  uint64_t seed = 0;
  WorkloadDensity density;
  std::vector<ProblemPlan> problems;

  nlohmann::json to_json() const;
};

struct WorkloadCounts {
  uint64_t implementations = 0;
  uint64_t tests = 0;
  uint64_t sequences = 0;
  uint64_t observation_rows = 0;
};

WorkloadPlan plan_workload(int problems, uint64_t seed, const WorkloadDensity& density = {},
                           const std::string& data_set_id = "synthetic_suite");

WorkloadCounts expected_counts(const WorkloadPlan& plan);

// Streams the three JSONL exports. Null streams are skipped; the returned
// counts always reflect what full generation would emit. Identical plans
// produce byte-identical streams.
WorkloadCounts generate_workload(const WorkloadPlan& plan, std::ostream* implementations,
                                 std::ostream* tests, std::ostream* observations);

// Writes implementations.jsonl, tests.jsonl, observations.jsonl and plan.json
// into dir.
WorkloadCounts generate_workload_files(const WorkloadPlan& plan,
                                       const std::filesystem::path& dir);

// Alias naming used by the generator (also needed by tests/bench to address
// planted implementations).
std::string workload_problem_id(int problem_index);
std::string workload_impl_alias(int problem_index, int impl_index);
std::string workload_test_alias(int problem_index, int test_index);

}  // namespace obslake
