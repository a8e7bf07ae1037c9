#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "obslake/schema.hpp"
#include "obslake/value.hpp"

namespace obslake {

// Write-once columnar segment file.
//
// Layout (little-endian):
//   "OBSL1"                       5-byte magic
//   column chunk bytes            contiguous, one region per chunk
//   footer                        JSON: row_count, schema_version, chunk directory
//   u32 footer_length
//   u64 checksum                  FNV-1a 64 over bytes [0, file_size - 12)
//
// The chunk directory carries per-column encoding, byte range, null count and
// min/max statistics for scalar columns.

enum class Encoding : uint8_t { plain = 0, rle = 1, dict = 2 };

const char* encoding_name(Encoding encoding);

struct ColumnChunkMeta {
  int field_id = 0;
  Encoding encoding = Encoding::plain;
  uint64_t offset = 0;
  uint64_t length = 0;
  uint64_t null_count = 0;
  std::optional<Value> min_value;
  std::optional<Value> max_value;
};

struct SegmentInfo {
  std::filesystem::path path;
  uint64_t row_count = 0;
  int schema_version = 0;
  std::vector<ColumnChunkMeta> columns;
  uint64_t checksum = 0;
  uint64_t file_size = 0;

  const ColumnChunkMeta* find_column(int field_id) const;
};

// Column-major batch of rows; columns are addressed by field_id.
struct RowBatch {
  std::vector<int> field_ids;
  std::vector<std::vector<Value>> columns;

  size_t row_count() const { return columns.empty() ? 0 : columns[0].size(); }
  int column_index(int field_id) const;
  std::vector<Value>& column(int field_id);
  const std::vector<Value>& column(int field_id) const;
  void append_row(const std::map<int, Value>& row);  // missing fields -> null
};

struct EncodingPolicy {
  double rle_adjacent_threshold = 0.9;  // fraction of equal adjacent pairs
  double dict_distinct_ratio = 0.5;     // distinct/rows bound for text columns
};

struct ScalarPredicate {
  enum class Op { eq, lt, le, gt, ge };
  Op op = Op::eq;
  Value value;

  bool matches(const Value& v) const;
};

// field_id -> predicate, combined as a conjunction.
using PredicateMap = std::map<int, ScalarPredicate>;

// Per-process counters used by pruning tests and the bench harness. Only
// segment files are counted; catalog metadata reads are not.
struct IoStats {
  std::atomic<uint64_t> files_opened{0};
  std::atomic<uint64_t> column_bytes_read{0};  // body bytes (chunk data)
  std::atomic<uint64_t> footer_bytes_read{0};

  void reset();
};

IoStats& io_stats();

// Optional capture of opened segment paths (used to prove partition pruning).
void begin_segment_path_capture();
std::vector<std::filesystem::path> end_segment_path_capture();

SegmentInfo write_segment(const RowBatch& rows, const TableSchema& schema,
                          const std::filesystem::path& path, const EncodingPolicy& policy = {});

class SegmentReader {
 public:
  explicit SegmentReader(const std::filesystem::path& path);

  const SegmentInfo& info() const { return info_; }

  // True when min/max statistics prove no row can match the predicate.
  static bool stats_exclude(const SegmentInfo& info, const PredicateMap& predicate);

  // Decodes the projected columns, applying the predicate row-wise. Stats
  // pruning short-circuits without touching column bytes. Projected fields
  // missing from the segment (schema evolution) come back as all-null
  // columns typed from read_schema.
  RowBatch read(const std::vector<int>& projection, const TableSchema& read_schema,
                const PredicateMap* predicate = nullptr);

 private:
  std::vector<char> read_body();

  std::filesystem::path path_;
  SegmentInfo info_;
  bool checksum_verified_ = false;
};

uint64_t fnv1a64(const void* data, size_t size, uint64_t seed = 0xcbf29ce484222325ULL);

}  // namespace obslake
