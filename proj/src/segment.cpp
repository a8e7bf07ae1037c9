#include "obslake/segment.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstring>
#include <unordered_map>
#include <unordered_set>

#include "json.hpp"
#include "obslake/error.hpp"

namespace obslake {

namespace {

constexpr char kMagic[5] = {'O', 'B', 'S', 'L', '1'};
constexpr size_t kTrailerSize = 12;  // u32 footer length + u64 checksum
constexpr uint32_t kNullIndex = 0xffffffffu;

struct PathCapture {
  std::mutex mu;
  bool active = false;
  std::vector<std::filesystem::path> paths;
};

PathCapture& path_capture() {
  static PathCapture capture;
  return capture;
}

void put_u32(std::string& out, uint32_t v) {
  char buf[4];
  std::memcpy(buf, &v, 4);
  out.append(buf, 4);
}

void put_u64(std::string& out, uint64_t v) {
  char buf[8];
  std::memcpy(buf, &v, 8);
  out.append(buf, 8);
}

void put_typed(std::string& out, const Value& v) {
  switch (v.kind) {
    case ValueKind::integer:
      put_u64(out, static_cast<uint64_t>(v.integer));
      break;
    case ValueKind::decimal: {
      uint64_t bits;
      std::memcpy(&bits, &v.decimal, 8);
      put_u64(out, bits);
      break;
    }
    case ValueKind::text:
      put_u32(out, static_cast<uint32_t>(v.text.size()));
      out.append(v.text);
      break;
    case ValueKind::null:
      break;
  }
}

struct ByteCursor {
  const char* data;
  size_t size;
  size_t pos = 0;

  void require(size_t n) const {
    if (pos + n > size) throw Error(ErrorCode::CorruptEncoding, "chunk truncated");
  }
  uint32_t u32() {
    require(4);
    uint32_t v;
    std::memcpy(&v, data + pos, 4);
    pos += 4;
    return v;
  }
  uint64_t u64() {
    require(8);
    uint64_t v;
    std::memcpy(&v, data + pos, 8);
    pos += 8;
    return v;
  }
  Value typed(ValueKind kind) {
    switch (kind) {
      case ValueKind::integer:
        return Value::of_integer(static_cast<int64_t>(u64()));
      case ValueKind::decimal: {
        uint64_t bits = u64();
        double d;
        std::memcpy(&d, &bits, 8);
        return Value::of_decimal(d);
      }
      case ValueKind::text: {
        uint32_t len = u32();
        require(len);
        Value v = Value::of_text(std::string(data + pos, len));
        pos += len;
        return v;
      }
      case ValueKind::null:
        return Value();
    }
    return Value();
  }
};

void encode_plain(const std::vector<Value>& values, std::string& out) {
  size_t n = values.size();
  size_t bitmap_bytes = (n + 7) / 8;
  size_t bitmap_at = out.size();
  out.append(bitmap_bytes, '\0');
  for (size_t i = 0; i < n; ++i) {
    if (!values[i].is_null()) {
      out[bitmap_at + i / 8] |= static_cast<char>(1u << (i % 8));
      put_typed(out, values[i]);
    }
  }
}

void encode_rle(const std::vector<Value>& values, std::string& out) {
  size_t run_count_at = out.size();
  put_u32(out, 0);
  uint32_t runs = 0;
  size_t i = 0;
  while (i < values.size()) {
    size_t j = i + 1;
    while (j < values.size() && values[j] == values[i]) ++j;
    put_u32(out, static_cast<uint32_t>(j - i));
    out.push_back(values[i].is_null() ? '\0' : '\1');
    if (!values[i].is_null()) put_typed(out, values[i]);
    ++runs;
    i = j;
  }
  std::memcpy(out.data() + run_count_at, &runs, 4);
}

void encode_dict(const std::vector<Value>& values, std::string& out) {
  std::vector<const std::string*> entries;
  std::unordered_map<std::string_view, uint32_t> index_of;
  std::vector<uint32_t> indexes;
  indexes.reserve(values.size());
  for (const auto& v : values) {
    if (v.is_null()) {
      indexes.push_back(kNullIndex);
      continue;
    }
    auto [it, inserted] = index_of.try_emplace(v.text, static_cast<uint32_t>(entries.size()));
    if (inserted) entries.push_back(&v.text);
    indexes.push_back(it->second);
  }
  put_u32(out, static_cast<uint32_t>(entries.size()));
  for (const auto* e : entries) {
    put_u32(out, static_cast<uint32_t>(e->size()));
    out.append(*e);
  }
  for (uint32_t idx : indexes) put_u32(out, idx);
}

std::vector<Value> decode_chunk(ByteCursor cursor, Encoding encoding, ValueKind kind,
                                uint64_t row_count) {
  std::vector<Value> values;
  values.reserve(row_count);
  switch (encoding) {
    case Encoding::plain: {
      size_t bitmap_bytes = (row_count + 7) / 8;
      cursor.require(bitmap_bytes);
      const char* bitmap = cursor.data + cursor.pos;
      cursor.pos += bitmap_bytes;
      for (uint64_t i = 0; i < row_count; ++i) {
        bool present = (bitmap[i / 8] >> (i % 8)) & 1;
        values.push_back(present ? cursor.typed(kind) : Value());
      }
      break;
    }
    case Encoding::rle: {
      uint32_t runs = cursor.u32();
      for (uint32_t r = 0; r < runs; ++r) {
        uint32_t len = cursor.u32();
        cursor.require(1);
        bool present = cursor.data[cursor.pos++] != 0;
        Value v = present ? cursor.typed(kind) : Value();
        if (values.size() + len > row_count) {
          throw Error(ErrorCode::CorruptEncoding, "rle run overflows row count");
        }
        for (uint32_t k = 0; k < len; ++k) values.push_back(v);
      }
      break;
    }
    case Encoding::dict: {
      uint32_t entry_count = cursor.u32();
      std::vector<Value> entries;
      entries.reserve(entry_count);
      for (uint32_t e = 0; e < entry_count; ++e) entries.push_back(cursor.typed(ValueKind::text));
      for (uint64_t i = 0; i < row_count; ++i) {
        uint32_t idx = cursor.u32();
        if (idx == kNullIndex) {
          values.push_back(Value());
        } else if (idx < entry_count) {
          values.push_back(entries[idx]);
        } else {
          throw Error(ErrorCode::CorruptEncoding, "dict index out of range");
        }
      }
      break;
    }
  }
  if (values.size() != row_count) {
    throw Error(ErrorCode::CorruptEncoding, "decoded value count mismatch");
  }
  if (cursor.pos != cursor.size) {
    throw Error(ErrorCode::CorruptEncoding, "trailing bytes in chunk");
  }
  return values;
}

Encoding choose_encoding(const std::vector<Value>& values, ValueKind kind,
                         const EncodingPolicy& policy) {
  size_t n = values.size();
  if (n >= 2) {
    size_t equal_pairs = 0;
    for (size_t i = 1; i < n; ++i) {
      if (values[i] == values[i - 1]) ++equal_pairs;
    }
    if (static_cast<double>(equal_pairs) >= policy.rle_adjacent_threshold * (n - 1)) {
      return Encoding::rle;
    }
  }
  if (kind == ValueKind::text && n >= 2) {
    std::unordered_set<std::string_view> distinct;
    for (const auto& v : values) {
      if (!v.is_null()) distinct.insert(v.text);
    }
    if (static_cast<double>(distinct.size()) <= policy.dict_distinct_ratio * n) {
      return Encoding::dict;
    }
  }
  return Encoding::plain;
}

constexpr size_t kMaxTextStat = 64;

// Stats are kept for scalar logical types only; long text values opt the
// column out so footers stay small.
void compute_stats(const std::vector<Value>& values, FieldType type, ColumnChunkMeta& meta) {
  if (type != FieldType::text && type != FieldType::integer && type != FieldType::decimal) return;
  const Value* min_v = nullptr;
  const Value* max_v = nullptr;
  for (const auto& v : values) {
    if (v.is_null()) continue;
    if (v.kind == ValueKind::text && v.text.size() > kMaxTextStat) return;
    if (v.kind == ValueKind::decimal && std::isnan(v.decimal)) return;
    if (min_v == nullptr || v.less_than(*min_v)) min_v = &v;
    if (max_v == nullptr || max_v->less_than(v)) max_v = &v;
  }
  if (min_v != nullptr) {
    meta.min_value = *min_v;
    meta.max_value = *max_v;
  }
}

nlohmann::json stat_to_json(const Value& v) {
  switch (v.kind) {
    case ValueKind::text:
      return v.text;
    case ValueKind::integer:
      return v.integer;
    case ValueKind::decimal:
      return v.decimal;
    case ValueKind::null:
      return nullptr;
  }
  return nullptr;
}

Value stat_from_json(const nlohmann::json& doc) {
  if (doc.is_string()) return Value::of_text(doc.get<std::string>());
  if (doc.is_number_integer() || doc.is_number_unsigned()) {
    return Value::of_integer(doc.get<int64_t>());
  }
  if (doc.is_number_float()) return Value::of_decimal(doc.get<double>());
  return Value();
}

void write_file_atomic_exclusive(const std::filesystem::path& path, const std::string& bytes) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  int fd = ::open(tmp.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
  if (fd < 0) {
    throw Error(ErrorCode::IoFailure, "cannot create " + tmp.string() + ": " + std::strerror(errno));
  }
  size_t written = 0;
  while (written < bytes.size()) {
    ssize_t n = ::write(fd, bytes.data() + written, bytes.size() - written);
    if (n < 0) {
      ::close(fd);
      ::unlink(tmp.c_str());
      throw Error(ErrorCode::IoFailure, "write failed: " + std::string(std::strerror(errno)));
    }
    written += static_cast<size_t>(n);
  }
  if (::fsync(fd) != 0) {
    ::close(fd);
    ::unlink(tmp.c_str());
    throw Error(ErrorCode::IoFailure, "fsync failed");
  }
  ::close(fd);
  // link() is the atomic publish: it fails instead of overwriting.
  if (::link(tmp.c_str(), path.c_str()) != 0) {
    int saved = errno;
    ::unlink(tmp.c_str());
    if (saved == EEXIST) {
      throw Error(ErrorCode::SegmentExists, "segment already exists: " + path.string());
    }
    throw Error(ErrorCode::IoFailure,
                "cannot publish " + path.string() + ": " + std::strerror(saved));
  }
  ::unlink(tmp.c_str());
}

}  // namespace

uint64_t fnv1a64(const void* data, size_t size, uint64_t seed) {
  const unsigned char* p = static_cast<const unsigned char*>(data);
  uint64_t h = seed;
  for (size_t i = 0; i < size; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

const char* encoding_name(Encoding encoding) {
  switch (encoding) {
    case Encoding::plain:
      return "plain";
    case Encoding::rle:
      return "rle";
    case Encoding::dict:
      return "dict";
  }
  return "plain";
}

const ColumnChunkMeta* SegmentInfo::find_column(int field_id) const {
  for (const auto& c : columns) {
    if (c.field_id == field_id) return &c;
  }
  return nullptr;
}

int RowBatch::column_index(int field_id) const {
  for (size_t i = 0; i < field_ids.size(); ++i) {
    if (field_ids[i] == field_id) return static_cast<int>(i);
  }
  return -1;
}

std::vector<Value>& RowBatch::column(int field_id) {
  int idx = column_index(field_id);
  if (idx < 0) throw Error(ErrorCode::SchemaMismatch, "batch has no field " + std::to_string(field_id));
  return columns[idx];
}

const std::vector<Value>& RowBatch::column(int field_id) const {
  return const_cast<RowBatch*>(this)->column(field_id);
}

void RowBatch::append_row(const std::map<int, Value>& row) {
  for (const auto& [fid, value] : row) {
    if (column_index(fid) < 0) {
      field_ids.push_back(fid);
      columns.emplace_back(row_count() > 0 ? std::vector<Value>(row_count()) : std::vector<Value>());
    }
  }
  for (size_t i = 0; i < field_ids.size(); ++i) {
    auto it = row.find(field_ids[i]);
    columns[i].push_back(it == row.end() ? Value() : it->second);
  }
}

bool ScalarPredicate::matches(const Value& v) const {
  if (v.is_null() || v.kind != value.kind) return false;
  switch (op) {
    case Op::eq:
      return v == value;
    case Op::lt:
      return v.less_than(value);
    case Op::le:
      return !value.less_than(v);
    case Op::gt:
      return value.less_than(v);
    case Op::ge:
      return !v.less_than(value);
  }
  return false;
}

void IoStats::reset() {
  files_opened = 0;
  column_bytes_read = 0;
  footer_bytes_read = 0;
}

IoStats& io_stats() {
  static IoStats stats;
  return stats;
}

void begin_segment_path_capture() {
  auto& capture = path_capture();
  std::lock_guard<std::mutex> lock(capture.mu);
  capture.active = true;
  capture.paths.clear();
}

std::vector<std::filesystem::path> end_segment_path_capture() {
  auto& capture = path_capture();
  std::lock_guard<std::mutex> lock(capture.mu);
  capture.active = false;
  return std::move(capture.paths);
}

SegmentInfo write_segment(const RowBatch& rows, const TableSchema& schema,
                          const std::filesystem::path& path, const EncodingPolicy& policy) {
  size_t n = rows.row_count();
  if (n == 0 || rows.field_ids.empty()) {
    throw Error(ErrorCode::InvalidArgument, "write_segment requires a non-empty batch");
  }
  for (const auto& col : rows.columns) {
    if (col.size() != n) {
      throw Error(ErrorCode::SchemaMismatch, "ragged column lengths in batch");
    }
  }

  SegmentInfo info;
  info.path = path;
  info.row_count = n;
  info.schema_version = schema.schema_id;

  std::string buf(kMagic, sizeof(kMagic));

  std::vector<size_t> order(rows.field_ids.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(),
            [&](size_t a, size_t b) { return rows.field_ids[a] < rows.field_ids[b]; });

  for (size_t pos : order) {
    int fid = rows.field_ids[pos];
    const FieldDef* field = schema.find_field(fid);
    if (field == nullptr) {
      throw Error(ErrorCode::SchemaMismatch,
                  "field " + std::to_string(fid) + " not in schema " + std::to_string(schema.schema_id));
    }
    ValueKind kind = physical_kind(field->type);
    const auto& values = rows.columns[pos];

    ColumnChunkMeta meta;
    meta.field_id = fid;
    for (const auto& v : values) {
      if (v.is_null()) {
        if (!field->nullable) {
          throw Error(ErrorCode::SchemaMismatch, "null in non-nullable field " + field->name);
        }
        ++meta.null_count;
      } else if (v.kind != kind) {
        throw Error(ErrorCode::SchemaMismatch, "value kind mismatch in field " + field->name);
      }
    }

    meta.encoding = choose_encoding(values, kind, policy);
    meta.offset = buf.size();
    switch (meta.encoding) {
      case Encoding::plain:
        encode_plain(values, buf);
        break;
      case Encoding::rle:
        encode_rle(values, buf);
        break;
      case Encoding::dict:
        encode_dict(values, buf);
        break;
    }
    meta.length = buf.size() - meta.offset;
    compute_stats(values, field->type, meta);
    info.columns.push_back(std::move(meta));
  }

  nlohmann::json footer;
  footer["format"] = "OBSL1";
  footer["row_count"] = info.row_count;
  footer["schema_version"] = info.schema_version;
  nlohmann::json cols = nlohmann::json::array();
  for (const auto& c : info.columns) {
    nlohmann::json col = {{"field_id", c.field_id},
                          {"encoding", encoding_name(c.encoding)},
                          {"offset", c.offset},
                          {"length", c.length},
                          {"null_count", c.null_count}};
    if (c.min_value) {
      col["min"] = stat_to_json(*c.min_value);
      col["max"] = stat_to_json(*c.max_value);
    }
    cols.push_back(std::move(col));
  }
  footer["columns"] = std::move(cols);

  std::string footer_text = footer.dump();
  buf += footer_text;
  uint64_t checksum = fnv1a64(buf.data(), buf.size());
  put_u32(buf, static_cast<uint32_t>(footer_text.size()));
  put_u64(buf, checksum);

  info.checksum = checksum;
  info.file_size = buf.size();
  write_file_atomic_exclusive(path, buf);
  return info;
}

SegmentReader::SegmentReader(const std::filesystem::path& path) : path_(path) {
  io_stats().files_opened.fetch_add(1, std::memory_order_relaxed);
  {
    auto& capture = path_capture();
    std::lock_guard<std::mutex> lock(capture.mu);
    if (capture.active) capture.paths.push_back(path);
  }

  std::error_code ec;
  uint64_t size = std::filesystem::file_size(path, ec);
  if (ec) throw Error(ErrorCode::IoFailure, "cannot stat " + path.string());
  if (size < sizeof(kMagic) + kTrailerSize) {
    throw Error(ErrorCode::CorruptEncoding, "segment too small: " + path.string());
  }

  int fd = ::open(path.c_str(), O_RDONLY);
  if (fd < 0) throw Error(ErrorCode::IoFailure, "cannot open " + path.string());

  char trailer[kTrailerSize];
  if (::pread(fd, trailer, kTrailerSize, static_cast<off_t>(size - kTrailerSize)) !=
      static_cast<ssize_t>(kTrailerSize)) {
    ::close(fd);
    throw Error(ErrorCode::IoFailure, "cannot read trailer of " + path.string());
  }
  uint32_t footer_len;
  uint64_t checksum;
  std::memcpy(&footer_len, trailer, 4);
  std::memcpy(&checksum, trailer + 4, 8);
  if (footer_len + sizeof(kMagic) + kTrailerSize > size) {
    ::close(fd);
    throw Error(ErrorCode::CorruptEncoding, "footer length out of range in " + path.string());
  }

  std::string footer_text(footer_len, '\0');
  if (::pread(fd, footer_text.data(), footer_len,
              static_cast<off_t>(size - kTrailerSize - footer_len)) !=
      static_cast<ssize_t>(footer_len)) {
    ::close(fd);
    throw Error(ErrorCode::IoFailure, "cannot read footer of " + path.string());
  }
  ::close(fd);
  io_stats().footer_bytes_read.fetch_add(footer_len + kTrailerSize, std::memory_order_relaxed);

  nlohmann::json footer = nlohmann::json::parse(footer_text, nullptr, false);
  if (footer.is_discarded() || footer.value("format", "") != "OBSL1") {
    throw Error(ErrorCode::CorruptEncoding, "bad footer in " + path.string());
  }

  info_.path = path;
  info_.file_size = size;
  info_.checksum = checksum;
  info_.row_count = footer.at("row_count").get<uint64_t>();
  info_.schema_version = footer.at("schema_version").get<int>();
  for (const auto& col : footer.at("columns")) {
    ColumnChunkMeta meta;
    meta.field_id = col.at("field_id").get<int>();
    std::string enc = col.at("encoding").get<std::string>();
    meta.encoding = enc == "rle" ? Encoding::rle : enc == "dict" ? Encoding::dict : Encoding::plain;
    meta.offset = col.at("offset").get<uint64_t>();
    meta.length = col.at("length").get<uint64_t>();
    meta.null_count = col.at("null_count").get<uint64_t>();
    if (col.contains("min")) {
      meta.min_value = stat_from_json(col["min"]);
      meta.max_value = stat_from_json(col["max"]);
    }
    if (meta.offset < sizeof(kMagic) || meta.offset + meta.length > size - kTrailerSize) {
      throw Error(ErrorCode::CorruptEncoding, "chunk range out of bounds in " + path.string());
    }
    info_.columns.push_back(std::move(meta));
  }
}

bool SegmentReader::stats_exclude(const SegmentInfo& info, const PredicateMap& predicate) {
  for (const auto& [fid, pred] : predicate) {
    const ColumnChunkMeta* col = info.find_column(fid);
    if (col == nullptr) continue;  // evolved field: decided at scan time
    if (col->null_count == info.row_count) return true;  // no non-null value can match
    if (!col->min_value || !col->max_value) continue;
    const Value& lo = *col->min_value;
    const Value& hi = *col->max_value;
    if (lo.kind != pred.value.kind) continue;
    const Value& v = pred.value;
    switch (pred.op) {
      case ScalarPredicate::Op::eq:
        if (v.less_than(lo) || hi.less_than(v)) return true;
        break;
      case ScalarPredicate::Op::lt:
        if (!lo.less_than(v)) return true;
        break;
      case ScalarPredicate::Op::le:
        if (v.less_than(lo)) return true;
        break;
      case ScalarPredicate::Op::gt:
        if (!v.less_than(hi)) return true;
        break;
      case ScalarPredicate::Op::ge:
        if (hi.less_than(v)) return true;
        break;
    }
  }
  return false;
}

std::vector<char> SegmentReader::read_body() {
  size_t body_size = info_.file_size - kTrailerSize;
  std::vector<char> body(body_size);
  int fd = ::open(path_.c_str(), O_RDONLY);
  if (fd < 0) throw Error(ErrorCode::IoFailure, "cannot open " + path_.string());
  size_t got = 0;
  while (got < body_size) {
    ssize_t n = ::pread(fd, body.data() + got, body_size - got, static_cast<off_t>(got));
    if (n <= 0) {
      ::close(fd);
      throw Error(ErrorCode::IoFailure, "cannot read " + path_.string());
    }
    got += static_cast<size_t>(n);
  }
  ::close(fd);

  if (!checksum_verified_) {
    if (fnv1a64(body.data(), body.size()) != info_.checksum) {
      throw Error(ErrorCode::ChecksumMismatch, "checksum mismatch in " + path_.string());
    }
    checksum_verified_ = true;
  }
  return body;
}

RowBatch SegmentReader::read(const std::vector<int>& projection, const TableSchema& read_schema,
                             const PredicateMap* predicate) {
  for (int fid : projection) {
    if (read_schema.find_field(fid) == nullptr) {
      throw Error(ErrorCode::SchemaMismatch,
                  "projected field " + std::to_string(fid) + " is not in the read schema");
    }
  }
  RowBatch out;
  out.field_ids = projection;
  out.columns.resize(projection.size());
  if (predicate != nullptr && stats_exclude(info_, *predicate)) {
    return out;
  }

  // Decode set = projection plus any predicate-only columns.
  std::vector<int> decode_fields = projection;
  if (predicate != nullptr) {
    for (const auto& [fid, pred] : *predicate) {
      (void)pred;
      if (std::find(decode_fields.begin(), decode_fields.end(), fid) == decode_fields.end()) {
        decode_fields.push_back(fid);
      }
    }
  }

  std::vector<char> body = read_body();
  uint64_t chunk_bytes = 0;

  std::map<int, std::vector<Value>> decoded;
  for (int fid : decode_fields) {
    const ColumnChunkMeta* col = info_.find_column(fid);
    if (col == nullptr) {
      decoded[fid] = std::vector<Value>(info_.row_count);  // evolved field: nulls
      continue;
    }
    const FieldDef* field = read_schema.find_field(fid);
    if (field == nullptr) {
      throw Error(ErrorCode::SchemaMismatch,
                  "segment column " + std::to_string(fid) + " missing from read schema");
    }
    ByteCursor cursor{body.data() + col->offset, col->length, 0};
    decoded[fid] = decode_chunk(cursor, col->encoding, physical_kind(field->type), info_.row_count);
    chunk_bytes += col->length;
  }
  io_stats().column_bytes_read.fetch_add(chunk_bytes, std::memory_order_relaxed);

  std::vector<bool> keep(info_.row_count, true);
  size_t kept = info_.row_count;
  if (predicate != nullptr) {
    for (const auto& [fid, pred] : *predicate) {
      const auto& values = decoded[fid];
      for (uint64_t i = 0; i < info_.row_count; ++i) {
        if (keep[i] && !pred.matches(values[i])) {
          keep[i] = false;
          --kept;
        }
      }
    }
  }

  for (size_t c = 0; c < projection.size(); ++c) {
    auto& src = decoded[projection[c]];
    if (kept == info_.row_count) {
      out.columns[c] = std::move(src);
    } else {
      out.columns[c].reserve(kept);
      for (uint64_t i = 0; i < info_.row_count; ++i) {
        if (keep[i]) out.columns[c].push_back(std::move(src[i]));
      }
    }
  }
  return out;
}

}  // namespace obslake
