#include "obslake/lakehouse.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <array>
#include <atomic>
#include <cerrno>
#include <chrono>
#include <cstdlib>
#include <cstring>
#include <ctime>
#include <random>
#include <thread>

#include "obslake/error.hpp"
#include "obslake/parallel.hpp"

namespace obslake {

namespace {

constexpr int kFormatVersion = 1;

bool is_unreserved(char c) {
  return (c >= 'A' && c <= 'Z') || (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == '-' ||
         c == '_' || c == '.';
}

std::string now_rfc3339() {
  using namespace std::chrono;
  auto now = system_clock::now();
  std::time_t secs = system_clock::to_time_t(now);
  auto ms = duration_cast<milliseconds>(now.time_since_epoch()).count() % 1000;
  std::tm tm{};
  gmtime_r(&secs, &tm);
  char buf[72];
  std::snprintf(buf, sizeof(buf), "%04d-%02d-%02dT%02d:%02d:%02d.%03dZ", tm.tm_year + 1900,
                tm.tm_mon + 1, tm.tm_mday, tm.tm_hour, tm.tm_min, tm.tm_sec,
                static_cast<int>(ms));
  return buf;
}

std::string unique_segment_name() {
  static std::atomic<uint64_t> counter{0};
  static const uint64_t session = [] {
    std::random_device rd;
    return (static_cast<uint64_t>(rd()) << 32) ^ rd() ^ (static_cast<uint64_t>(::getpid()) << 16);
  }();
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%016llx-%08llx.seg",
                static_cast<unsigned long long>(session),
                static_cast<unsigned long long>(counter.fetch_add(1)));
  return buf;
}

void write_bytes(const std::filesystem::path& path, const std::string& bytes, bool do_fsync,
                 bool exclusive) {
  int flags = O_CREAT | O_WRONLY | O_TRUNC | (exclusive ? O_EXCL : 0);
  int fd = ::open(path.c_str(), flags, 0644);
  if (fd < 0) {
    throw Error(ErrorCode::IoFailure, "cannot create " + path.string() + ": " + std::strerror(errno));
  }
  size_t written = 0;
  while (written < bytes.size()) {
    ssize_t n = ::write(fd, bytes.data() + written, bytes.size() - written);
    if (n < 0) {
      ::close(fd);
      ::unlink(path.c_str());
      throw Error(ErrorCode::IoFailure, "write failed: " + std::string(std::strerror(errno)));
    }
    written += static_cast<size_t>(n);
  }
  if (do_fsync && ::fsync(fd) != 0) {
    ::close(fd);
    throw Error(ErrorCode::IoFailure, "fsync failed for " + path.string());
  }
  ::close(fd);
}

nlohmann::json read_json_file(const std::filesystem::path& path) {
  int fd = ::open(path.c_str(), O_RDONLY);
  if (fd < 0) throw Error(ErrorCode::IoFailure, "cannot open " + path.string());
  std::string text;
  char buf[65536];
  ssize_t n;
  while ((n = ::read(fd, buf, sizeof(buf))) > 0) text.append(buf, static_cast<size_t>(n));
  ::close(fd);
  nlohmann::json doc = nlohmann::json::parse(text, nullptr, false);
  if (doc.is_discarded()) {
    throw Error(ErrorCode::ParseError, "invalid JSON in " + path.string());
  }
  return doc;
}

}  // namespace

std::string encode_partition_component(std::string_view component) {
  if (component.empty()) {
    throw Error(ErrorCode::InvalidPartitionKey, "partition key component must be non-empty");
  }
  bool all_dots = component.find_first_not_of('.') == std::string_view::npos;
  std::string out;
  out.reserve(component.size());
  static const char* hex = "0123456789ABCDEF";
  for (unsigned char c : component) {
    if (is_unreserved(static_cast<char>(c)) && !(all_dots && c == '.')) {
      out.push_back(static_cast<char>(c));
    } else {
      out.push_back('%');
      out.push_back(hex[c >> 4]);
      out.push_back(hex[c & 0xf]);
    }
  }
  return out;
}

std::string decode_partition_component(std::string_view encoded) {
  std::string out;
  for (size_t i = 0; i < encoded.size(); ++i) {
    if (encoded[i] == '%' && i + 2 < encoded.size()) {
      out.push_back(static_cast<char>(std::stoi(std::string(encoded.substr(i + 1, 2)), nullptr, 16)));
      i += 2;
    } else {
      out.push_back(encoded[i]);
    }
  }
  return out;
}

const TableSchema& Snapshot::schema(TableId table) const {
  auto it = schemas.find(table_name(table));
  if (it == schemas.end()) {
    throw Error(ErrorCode::SchemaMismatch, "snapshot has no schema for table");
  }
  return it->second;
}

const TableManifest& Snapshot::manifest(TableId table) const {
  static const TableManifest empty;
  auto it = manifests.find(table_name(table));
  return it == manifests.end() ? empty : it->second;
}

nlohmann::json Snapshot::to_json() const {
  nlohmann::json doc;
  doc["snapshot_id"] = snapshot_id;
  if (parent_id) {
    doc["parent_id"] = *parent_id;
  } else {
    doc["parent_id"] = nullptr;
  }
  doc["timestamp"] = timestamp;
  nlohmann::json schemas_doc = nlohmann::json::object();
  for (const auto& [name, schema] : schemas) schemas_doc[name] = schema.to_json();
  doc["schemas"] = std::move(schemas_doc);
  nlohmann::json manifest_doc = nlohmann::json::object();
  for (const auto& [name, manifest] : manifests) {
    nlohmann::json parts = nlohmann::json::array();
    for (const auto& [key, segments] : manifest.partitions) {
      nlohmann::json segs = nlohmann::json::array();
      for (const auto& s : segments) {
        segs.push_back({{"path", s.rel_path},
                        {"row_count", s.row_count},
                        {"byte_size", s.byte_size},
                        {"checksum", s.checksum},
                        {"schema_version", s.schema_version}});
      }
      parts.push_back({{"data_set_id", key.data_set_id},
                       {"problem_id", key.problem_id},
                       {"segments", std::move(segs)}});
    }
    manifest_doc[name] = std::move(parts);
  }
  doc["manifest"] = std::move(manifest_doc);
  return doc;
}

Snapshot Snapshot::from_json(const nlohmann::json& doc) {
  Snapshot snap;
  snap.snapshot_id = doc.at("snapshot_id").get<int64_t>();
  if (doc.contains("parent_id") && !doc["parent_id"].is_null()) {
    snap.parent_id = doc["parent_id"].get<int64_t>();
  }
  snap.timestamp = doc.at("timestamp").get<std::string>();
  for (const auto& [name, schema_doc] : doc.at("schemas").items()) {
    snap.schemas[name] = TableSchema::from_json(schema_doc);
  }
  for (const auto& [name, parts] : doc.at("manifest").items()) {
    TableManifest manifest;
    for (const auto& part : parts) {
      PartitionKey key{part.at("data_set_id").get<std::string>(),
                       part.at("problem_id").get<std::string>()};
      auto& segments = manifest.partitions[key];
      for (const auto& s : part.at("segments")) {
        segments.push_back({s.at("path").get<std::string>(), s.at("row_count").get<uint64_t>(),
                            s.at("byte_size").get<uint64_t>(), s.at("checksum").get<uint64_t>(),
                            s.at("schema_version").get<int>()});
      }
    }
    snap.manifests[name] = std::move(manifest);
  }
  return snap;
}

Lakehouse::Lakehouse(std::filesystem::path root, LakehouseOptions options)
    : root_(std::move(root)), options_(options) {}

std::shared_ptr<Lakehouse> Lakehouse::open(const std::filesystem::path& root,
                                           const LakehouseOptions& options) {
  std::filesystem::path marker = root / "obslake.json";
  if (std::filesystem::exists(marker)) {
    nlohmann::json doc = read_json_file(marker);
    if (doc.value("format", "") != "obslake") {
      throw Error(ErrorCode::NotALakehouse, root.string() + " has a foreign marker file");
    }
    int version = doc.value("version", 0);
    if (version > kFormatVersion) {
      throw Error(ErrorCode::VersionTooNew,
                  "on-disk format v" + std::to_string(version) + " is newer than this engine");
    }
    return std::shared_ptr<Lakehouse>(new Lakehouse(root, options));
  }

  if (!options.create_if_missing) {
    throw Error(ErrorCode::NotALakehouse, root.string() + " is not an observation lakehouse");
  }

  std::error_code ec;
  std::filesystem::create_directories(root / "catalog", ec);
  if (ec) throw Error(ErrorCode::IoFailure, "cannot create " + (root / "catalog").string());
  for (TableId table : kAllTables) {
    std::filesystem::create_directories(root / table_name(table), ec);
  }

  nlohmann::json marker_doc;
  marker_doc["format"] = "obslake";
  marker_doc["version"] = kFormatVersion;
  marker_doc["created"] = now_rfc3339();
  nlohmann::json schemas_doc = nlohmann::json::object();
  for (TableId table : kAllTables) {
    schemas_doc[table_name(table)] = baseline_schema(table).to_json();
  }
  marker_doc["baseline_schemas"] = std::move(schemas_doc);
  write_bytes(marker, marker_doc.dump(2) + "\n", options.fsync, /*exclusive=*/false);
  return std::shared_ptr<Lakehouse>(new Lakehouse(root, options));
}

std::filesystem::path Lakehouse::snapshot_path(int64_t id) const {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "v%010lld.json", static_cast<long long>(id));
  return catalog_dir() / buf;
}

int64_t Lakehouse::latest_snapshot_id() const {
  int64_t latest = 0;
  std::error_code ec;
  for (const auto& entry : std::filesystem::directory_iterator(catalog_dir(), ec)) {
    std::string name = entry.path().filename().string();
    if (name.size() == 16 && name.front() == 'v' && name.ends_with(".json")) {
      int64_t id = std::atoll(name.substr(1, 10).c_str());
      latest = std::max(latest, id);
    }
  }
  if (ec) throw Error(ErrorCode::NotALakehouse, "cannot list catalog in " + root_.string());
  return latest;
}

Snapshot Lakehouse::load_snapshot(int64_t snapshot_id) const {
  std::filesystem::path path = snapshot_path(snapshot_id);
  if (!std::filesystem::exists(path)) {
    throw Error(ErrorCode::UnknownSnapshot, "no snapshot " + std::to_string(snapshot_id));
  }
  return Snapshot::from_json(read_json_file(path));
}

Snapshot Lakehouse::current_state() const {
  int64_t latest = latest_snapshot_id();
  if (latest > 0) return load_snapshot(latest);
  Snapshot baseline;
  baseline.snapshot_id = 0;
  baseline.timestamp = now_rfc3339();
  for (TableId table : kAllTables) {
    baseline.schemas[table_name(table)] = baseline_schema(table);
    baseline.manifests[table_name(table)] = {};
  }
  return baseline;
}

ReadView Lakehouse::read_at(std::optional<int64_t> snapshot_id) const {
  if (snapshot_id) {
    if (*snapshot_id <= 0 || *snapshot_id > latest_snapshot_id()) {
      throw Error(ErrorCode::UnknownSnapshot, "no snapshot " + std::to_string(*snapshot_id));
    }
    return ReadView(root_, load_snapshot(*snapshot_id));
  }
  return ReadView(root_, current_state());
}

void Lakehouse::fault(std::string_view point) const {
  if (fault_injector_) fault_injector_(point);
}

Snapshot Lakehouse::commit_snapshot(const std::function<void(Snapshot&)>& apply) {
  std::mt19937_64 jitter{std::random_device{}()};
  for (int attempt = 0; attempt < options_.commit_retries; ++attempt) {
    Snapshot base = current_state();
    Snapshot next = base;
    next.snapshot_id = base.snapshot_id + 1;
    next.parent_id = base.snapshot_id > 0 ? std::optional<int64_t>(base.snapshot_id) : std::nullopt;
    next.timestamp = now_rfc3339();
    apply(next);

    fault("commit:before_tmp");
    std::filesystem::path final_path = snapshot_path(next.snapshot_id);
    std::filesystem::path tmp = catalog_dir() / ("tmp-" + unique_segment_name() + ".json");
    write_bytes(tmp, next.to_json().dump(2) + "\n", options_.fsync, /*exclusive=*/true);
    fault("commit:after_tmp");

    fault("commit:before_publish");
    // Exclusive-create is the compare-and-swap: the first committer of this
    // snapshot id wins, everyone else rebases.
    if (::link(tmp.c_str(), final_path.c_str()) != 0) {
      int saved = errno;
      ::unlink(tmp.c_str());
      if (saved == EEXIST) {
        std::this_thread::sleep_for(std::chrono::microseconds(jitter() % 500));
        continue;
      }
      throw Error(ErrorCode::IoFailure, "cannot publish snapshot: " + std::string(std::strerror(saved)));
    }
    ::unlink(tmp.c_str());
    fault("commit:after_publish");

    nlohmann::json hint = {{"snapshot_id", next.snapshot_id}};
    std::filesystem::path hint_tmp = catalog_dir() / ("tmp-hint-" + unique_segment_name());
    try {
      write_bytes(hint_tmp, hint.dump() + "\n", options_.fsync, /*exclusive=*/false);
      std::filesystem::rename(hint_tmp, catalog_dir() / "LATEST");
    } catch (const Error&) {
      // Hint is advisory; readers scan the catalog directory.
      std::error_code ec;
      std::filesystem::remove(hint_tmp, ec);
    }
    fault("commit:after_hint");
    return next;
  }
  throw Error(ErrorCode::CommitContention, "commit retries exhausted");
}

AppendTransaction Lakehouse::begin_append(TableId table) {
  return AppendTransaction(shared_from_this(), table);
}

AppendTransaction::AppendTransaction(std::shared_ptr<Lakehouse> lakehouse, TableId table)
    : lakehouse_(std::move(lakehouse)), table_(table) {
  schema_ = lakehouse_->current_state().schema(table);
}

std::vector<SegmentRef> AppendTransaction::stage_rows(const RowBatch& rows) {
  if (committed_) {
    throw Error(ErrorCode::InvalidArgument, "transaction already committed");
  }
  size_t n = rows.row_count();
  if (n == 0) throw Error(ErrorCode::InvalidArgument, "stage_rows requires rows");

  int ds_field = schema_.field_id("data_set_id");
  int prob_field = schema_.field_id("problem_id");
  const auto& ds_col = rows.column(ds_field);
  const auto& prob_col = rows.column(prob_field);

  // Group row indexes by partition, preserving order within each partition.
  std::map<PartitionKey, std::vector<size_t>> groups;
  for (size_t i = 0; i < n; ++i) {
    if (ds_col[i].kind != ValueKind::text || prob_col[i].kind != ValueKind::text ||
        ds_col[i].text.empty() || prob_col[i].text.empty()) {
      throw Error(ErrorCode::InvalidPartitionKey, "rows must carry non-empty partition keys");
    }
    groups[{ds_col[i].text, prob_col[i].text}].push_back(i);
  }

  std::vector<SegmentRef> created;
  for (const auto& [key, indexes] : groups) {
    RowBatch part;
    part.field_ids = rows.field_ids;
    part.columns.resize(rows.columns.size());
    for (size_t c = 0; c < rows.columns.size(); ++c) {
      part.columns[c].reserve(indexes.size());
      for (size_t i : indexes) part.columns[c].push_back(rows.columns[c][i]);
    }

    std::filesystem::path dir = lakehouse_->root() / table_name(table_) /
                                encode_partition_component(key.data_set_id) /
                                encode_partition_component(key.problem_id);
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw Error(ErrorCode::IoFailure, "cannot create partition dir " + dir.string());

    std::filesystem::path path = dir / unique_segment_name();
    SegmentInfo info = write_segment(part, schema_, path);
    lakehouse_->fault("append:after_segment_write");

    SegmentRef ref;
    ref.rel_path = std::filesystem::relative(path, lakehouse_->root()).string();
    ref.row_count = info.row_count;
    ref.byte_size = info.file_size;
    ref.checksum = info.checksum;
    ref.schema_version = info.schema_version;
    staged_.emplace_back(key, ref);
    created.push_back(std::move(ref));
  }
  return created;
}

Snapshot AppendTransaction::commit() {
  if (committed_) {
    throw Error(ErrorCode::InvalidArgument, "transaction already committed");
  }
  if (staged_.empty()) {
    throw Error(ErrorCode::EmptyTransaction, "nothing staged in this transaction");
  }
  Snapshot result = lakehouse_->commit_snapshot([this](Snapshot& snap) {
    auto& manifest = snap.manifests[table_name(table_)];
    for (const auto& [key, ref] : staged_) {
      manifest.partitions[key].push_back(ref);
    }
  });
  committed_ = true;
  return result;
}

TableSchema Lakehouse::add_column(TableId table, const std::string& name, FieldType type) {
  Snapshot snap = commit_snapshot([&](Snapshot& next) {
    TableSchema& schema = next.schemas[table_name(table)];
    if (schema.find_field(name) != nullptr) {
      throw Error(ErrorCode::DuplicateColumn,
                  "column " + name + " already exists in " + table_name(table));
    }
    schema.schema_id += 1;
    schema.fields.push_back({schema.max_field_id() + 1, name, type, /*nullable=*/true});
  });
  return snap.schema(table);
}

std::vector<SnapshotSummary> Lakehouse::snapshots() const {
  std::vector<SnapshotSummary> out;
  int64_t latest = latest_snapshot_id();
  for (int64_t id = 1; id <= latest; ++id) {
    Snapshot snap = load_snapshot(id);
    SnapshotSummary summary;
    summary.snapshot_id = snap.snapshot_id;
    summary.parent_id = snap.parent_id;
    summary.timestamp = snap.timestamp;
    for (const auto& [name, manifest] : snap.manifests) {
      uint64_t rows = 0;
      for (const auto& [key, segments] : manifest.partitions) {
        (void)key;
        for (const auto& s : segments) rows += s.row_count;
      }
      summary.row_counts[name] = rows;
    }
    out.push_back(std::move(summary));
  }
  return out;
}

ReadView::ReadView(std::filesystem::path root, Snapshot snapshot)
    : root_(std::move(root)), snapshot_(std::move(snapshot)) {}

std::vector<PartitionKey> ReadView::partitions(TableId table) const {
  std::vector<PartitionKey> out;
  for (const auto& [key, segments] : snapshot_.manifest(table).partitions) {
    (void)segments;
    out.push_back(key);
  }
  return out;
}

std::vector<PartitionStat> ReadView::list_partitions(TableId table) const {
  std::vector<PartitionStat> out;
  for (const auto& [key, segments] : snapshot_.manifest(table).partitions) {
    PartitionStat stat;
    stat.key = key;
    stat.segment_count = segments.size();
    for (const auto& s : segments) {
      stat.row_count += s.row_count;
      stat.byte_size += s.byte_size;
    }
    out.push_back(std::move(stat));
  }
  return out;
}

void ReadView::scan(TableId table, const PartitionKey& key, const std::vector<int>& projection,
                    const PredicateMap* predicate,
                    const std::function<void(const RowBatch&)>& sink) const {
  const auto& partitions = snapshot_.manifest(table).partitions;
  auto it = partitions.find(key);
  if (it == partitions.end()) return;
  const TableSchema& schema = snapshot_.schema(table);
  const auto& refs = it->second;

  // Segments decode independently; batches are delivered in manifest order.
  std::vector<RowBatch> batches(refs.size());
  std::vector<std::exception_ptr> errors(refs.size());
  parallel_for(refs.size(), [&](size_t i) {
    try {
      SegmentReader reader(root_ / refs[i].rel_path);
      batches[i] = reader.read(projection, schema, predicate);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  });
  for (const auto& error : errors) {
    if (error) std::rethrow_exception(error);
  }
  for (const auto& batch : batches) {
    if (batch.row_count() > 0) sink(batch);
  }
}

RowBatch ReadView::scan_all(TableId table, const PartitionKey& key,
                            const std::vector<int>& projection,
                            const PredicateMap* predicate) const {
  RowBatch all;
  all.field_ids = projection;
  all.columns.resize(projection.size());
  scan(table, key, projection, predicate, [&](const RowBatch& batch) {
    for (size_t c = 0; c < projection.size(); ++c) {
      auto& dst = all.columns[c];
      const auto& src = batch.columns[c];
      dst.insert(dst.end(), src.begin(), src.end());
    }
  });
  return all;
}

}  // namespace obslake
