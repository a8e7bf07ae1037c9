#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "obslake/canonical.hpp"
#include "obslake/lakehouse.hpp"

namespace obslake {

// Logical SRM reconstruction and the analytics built on it. All operations
// are read-only over a pinned ReadView and touch only the requested
// partition's segment files.

enum class SRMMode { output_view, full_view, joined_view };

struct SRMStepCell {
  int64_t step_id = 0;
  std::string operation;  // empty in output views
  std::string inputs;     // canonical array text; empty in output views
  std::string output;     // canonical text
};

// When one (test, implementation) pair was executed repeatedly, the cell
// carries the latest execution (greatest execution_id), matching the
// consensus vote unit.
struct SRMCell {
  std::string execution_id;
  std::vector<SRMStepCell> steps;  // sorted by step_id, contiguous
};

struct SRMView {
  PartitionKey partition;
  SRMMode mode = SRMMode::output_view;
  std::vector<std::string> tests;            // sorted lexicographically
  std::vector<std::string> implementations;  // sorted lexicographically
  // Absent pairings are simply absent keys, never empty step lists.
  std::map<std::pair<std::string, std::string>, SRMCell> cells;  // (test, impl)
  // joined_view only: dimension payloads keyed by the recorded reference.
  std::map<std::string, nlohmann::json> implementation_info;
  std::map<std::string, nlohmann::json> test_info;

  nlohmann::json to_json() const;
};

struct BehaviorFingerprint {
  std::string implementation_id;
  std::string digest;  // SHA-256 hex over the normalized output trace
  uint64_t trace_length = 0;

  nlohmann::json to_json() const;
};

struct BehaviorCluster {
  int class_id = 0;
  std::vector<std::string> members;  // sorted
  std::string representative;
  size_t size = 0;
};

struct ConsensusCellKey {
  std::string test_id;
  int64_t step_id = 0;

  auto operator<=>(const ConsensusCellKey&) const = default;
};

struct ConsensusCell {
  std::string majority_output;
  uint32_t support = 0;
  uint32_t total = 0;
  bool tied = false;
};

struct ConsensusOracle {
  PartitionKey partition;
  std::map<ConsensusCellKey, ConsensusCell> cells;

  nlohmann::json to_json() const;
};

enum class CellVerdict { agree, deviate, missing };

struct AssessReport {
  std::string subject;
  std::map<ConsensusCellKey, CellVerdict> verdicts;
  uint64_t agree = 0;
  uint64_t deviate = 0;
  uint64_t missing = 0;
  double agreement_ratio = 1.0;  // agree / (agree + deviate)

  nlohmann::json to_json() const;
};

struct DriftReport {
  std::vector<std::string> lineage;
  std::vector<std::string> fingerprints;           // per commit, parallel to lineage
  std::vector<std::pair<size_t, size_t>> drifted;  // adjacent index pairs that differ
  size_t common_tests = 0;

  nlohmann::json to_json() const;
};

SRMView srm_output_view(const ReadView& view, const PartitionKey& key);
SRMView srm_full_view(const ReadView& view, const PartitionKey& key);
SRMView srm_joined_view(const ReadView& view, const PartitionKey& key);

std::vector<BehaviorFingerprint> fingerprint_implementations(const ReadView& view,
                                                             const PartitionKey& key,
                                                             const EquivalenceConfig& cfg = {});

std::vector<BehaviorCluster> cluster_implementations(const ReadView& view, const PartitionKey& key,
                                                     const EquivalenceConfig& cfg = {});

ConsensusOracle consensus_oracle(const ReadView& view, const PartitionKey& key,
                                 const EquivalenceConfig& cfg = {});

AssessReport nversion_assess(const ReadView& view, const PartitionKey& key,
                             const EquivalenceConfig& cfg, const std::string& subject);

DriftReport behavioral_drift(const ReadView& view, const PartitionKey& key,
                             const EquivalenceConfig& cfg,
                             const std::vector<std::string>& lineage);

nlohmann::json clusters_to_json(const std::vector<BehaviorCluster>& clusters);

}  // namespace obslake
