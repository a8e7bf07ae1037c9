#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "obslake/schema.hpp"
#include "obslake/segment.hpp"

namespace obslake {

struct PartitionKey {
  std::string data_set_id;
  std::string problem_id;

  auto operator<=>(const PartitionKey&) const = default;
};

// Percent-encodes a key component for use as a directory name. Keys may hold
// arbitrary text (repository URLs included); the encoding is reversible.
std::string encode_partition_component(std::string_view component);
std::string decode_partition_component(std::string_view encoded);

struct SegmentRef {
  std::string rel_path;  // relative to the lakehouse root
  uint64_t row_count = 0;
  uint64_t byte_size = 0;
  uint64_t checksum = 0;
  int schema_version = 0;
};

struct TableManifest {
  std::map<PartitionKey, std::vector<SegmentRef>> partitions;
};

struct Snapshot {
  int64_t snapshot_id = 0;
  std::optional<int64_t> parent_id;
  std::string timestamp;  // UTC, RFC 3339
  std::map<std::string, TableSchema> schemas;      // keyed by table name
  std::map<std::string, TableManifest> manifests;  // keyed by table name

  const TableSchema& schema(TableId table) const;
  const TableManifest& manifest(TableId table) const;

  nlohmann::json to_json() const;
  static Snapshot from_json(const nlohmann::json& doc);
};

struct PartitionStat {
  PartitionKey key;
  uint64_t row_count = 0;
  uint64_t byte_size = 0;
  size_t segment_count = 0;
};

// Test hook: called at named points of the write path. Throwing from the
// callback simulates a crash between steps.
using FaultInjector = std::function<void(std::string_view point)>;

class Lakehouse;

// Read view pinned to one snapshot. Concurrent commits never change what an
// open view observes; all file resolution goes through the pinned manifest.
class ReadView {
 public:
  const Snapshot& snapshot() const { return snapshot_; }

  std::vector<PartitionKey> partitions(TableId table) const;
  std::vector<PartitionStat> list_partitions(TableId table) const;

  // Streams one RowBatch per segment of the partition, in manifest order.
  void scan(TableId table, const PartitionKey& key, const std::vector<int>& projection,
            const PredicateMap* predicate,
            const std::function<void(const RowBatch&)>& sink) const;

  // Convenience: concatenates all batches of the partition.
  RowBatch scan_all(TableId table, const PartitionKey& key, const std::vector<int>& projection,
                    const PredicateMap* predicate = nullptr) const;

 private:
  friend class Lakehouse;
  ReadView(std::filesystem::path root, Snapshot snapshot);

  std::filesystem::path root_;
  Snapshot snapshot_;
};

class AppendTransaction {
 public:
  // Writes one segment per partition present in the batch. Rows must carry
  // non-empty data_set_id / problem_id values.
  std::vector<SegmentRef> stage_rows(const RowBatch& rows);

  // Publishes the staged segments as the next snapshot. On collision with a
  // concurrent committer the transaction rebases and retries; the staged
  // segment files are never rewritten.
  Snapshot commit();

  TableId table() const { return table_; }
  const std::vector<std::pair<PartitionKey, SegmentRef>>& staged() const { return staged_; }

 private:
  friend class Lakehouse;
  AppendTransaction(std::shared_ptr<Lakehouse> lakehouse, TableId table);

  std::shared_ptr<Lakehouse> lakehouse_;
  TableId table_;
  TableSchema schema_;
  std::vector<std::pair<PartitionKey, SegmentRef>> staged_;
  bool committed_ = false;
};

struct LakehouseOptions {
  bool create_if_missing = false;
  bool fsync = true;
  int commit_retries = 100;
};

struct SnapshotSummary {
  int64_t snapshot_id;
  std::optional<int64_t> parent_id;
  std::string timestamp;
  std::map<std::string, uint64_t> row_counts;  // per table
};

class Lakehouse : public std::enable_shared_from_this<Lakehouse> {
 public:
  static std::shared_ptr<Lakehouse> open(const std::filesystem::path& root,
                                         const LakehouseOptions& options = {});

  const std::filesystem::path& root() const { return root_; }

  int64_t latest_snapshot_id() const;  // 0 when no snapshot exists
  ReadView read_at(std::optional<int64_t> snapshot_id = std::nullopt) const;

  AppendTransaction begin_append(TableId table);

  // Appends a nullable column and publishes the schema change as a snapshot.
  // Existing segment files are untouched.
  TableSchema add_column(TableId table, const std::string& name, FieldType type);

  std::vector<SnapshotSummary> snapshots() const;

  void set_fault_injector(FaultInjector injector) { fault_injector_ = std::move(injector); }

 private:
  friend class AppendTransaction;

  explicit Lakehouse(std::filesystem::path root, LakehouseOptions options);

  Snapshot load_snapshot(int64_t snapshot_id) const;
  Snapshot current_state() const;  // latest snapshot, or the baseline state
  Snapshot commit_snapshot(
      const std::function<void(Snapshot&)>& apply);  // rebase loop around exclusive-create
  void fault(std::string_view point) const;

  std::filesystem::path catalog_dir() const { return root_ / "catalog"; }
  std::filesystem::path snapshot_path(int64_t id) const;

  std::filesystem::path root_;
  LakehouseOptions options_;
  FaultInjector fault_injector_;
};

}  // namespace obslake
