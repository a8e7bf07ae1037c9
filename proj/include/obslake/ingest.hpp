#pragma once

#include <istream>
#include <map>
#include <memory>
#include <string>

#include "json.hpp"
#include "obslake/lakehouse.hpp"

namespace obslake {

// JSONL ingestion surface. One record per line, UTF-8:
//
//   implementations: {"data_set_id","problem_id","id"(optional alias),
//                     "source_code","language","static_metrics"(optional),
//                     "git_commit_hash"(optional)}
//   tests:           {"data_set_id","problem_id","id"(optional alias),
//                     "definition","definition_kind","language"}
//   observations:    {"data_set_id","problem_id","implementation_id","test_id",
//                     "execution_id","step_id","operation","inputs":[...],
//                     "output":...,"language","environment",
//                     "git_commit_hash"(optional),"metrics"(optional)}
//   plus the control line {"$end_execution":"<execution_id>"} marking an
//   execution complete (enables streaming step-contiguity validation).
//
// Bad lines are counted and skipped, never aborting the batch.

struct IngestReport {
  uint64_t rows_read = 0;
  uint64_t rows_written = 0;
  uint64_t rows_deduplicated = 0;
  uint64_t rows_rejected = 0;
  std::map<std::string, uint64_t> reject_reasons;
  double elapsed_seconds = 0;
  double parse_seconds = 0;
  double commit_seconds = 0;
  double rows_per_second = 0;

  void add_reject(const std::string& reason, uint64_t count = 1);
  nlohmann::json to_json() const;
  std::string human() const;
};

class Ingestor {
 public:
  explicit Ingestor(std::shared_ptr<Lakehouse> lakehouse);

  IngestReport ingest_implementations(std::istream& source);
  IngestReport ingest_tests(std::istream& source);
  IngestReport ingest_observations(std::istream& source, size_t batch_rows = 65536);

 private:
  std::shared_ptr<Lakehouse> lakehouse_;
};

}  // namespace obslake
