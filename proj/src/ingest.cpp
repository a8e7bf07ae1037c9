#include "obslake/ingest.hpp"

#include <chrono>
#include <functional>
#include <set>
#include <unordered_map>
#include <unordered_set>

#include "obslake/canonical.hpp"
#include "obslake/error.hpp"
#include "obslake/parallel.hpp"

namespace obslake {

namespace {

using SteadyClock = std::chrono::steady_clock;

double seconds_since(SteadyClock::time_point start) {
  return std::chrono::duration<double>(SteadyClock::now() - start).count();
}

constexpr size_t kParseChunkLines = 8192;

// Reads up to kParseChunkLines non-empty lines; returns false at EOF.
bool read_chunk(std::istream& source, std::vector<std::string>& lines) {
  lines.clear();
  std::string line;
  while (lines.size() < kParseChunkLines && std::getline(source, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    lines.push_back(std::move(line));
    line.clear();
  }
  if (source.bad()) {
    throw Error(ErrorCode::MalformedStream, "unreadable input stream");
  }
  return !lines.empty();
}

bool get_text(const nlohmann::json& doc, const char* name, bool required, std::string& out,
              std::string& reject) {
  auto it = doc.find(name);
  if (it == doc.end() || it->is_null()) {
    if (required) reject = std::string("missing_field:") + name;
    return false;
  }
  if (!it->is_string()) {
    reject = std::string("invalid_field:") + name;
    return false;
  }
  out = it->get<std::string>();
  if (required && out.empty()) {
    reject = std::string("invalid_field:") + name;
    return false;
  }
  return true;
}

// Metric maps are canonicalized object-of-numbers.
bool get_metric_map(const nlohmann::json& doc, const char* name, std::string& out,
                    std::string& reject) {
  auto it = doc.find(name);
  if (it == doc.end() || it->is_null()) return false;
  if (!it->is_object()) {
    reject = std::string("invalid_field:") + name;
    return false;
  }
  for (const auto& [k, v] : it->items()) {
    (void)k;
    if (!v.is_number()) {
      reject = std::string("invalid_field:") + name;
      return false;
    }
  }
  out = canonical_dump(*it);
  return true;
}

// ---------------------------------------------------------------------------
// Dimension ingestion (code_implementations and tests share the machinery).

struct DimParsed {
  std::string reject;
  PartitionKey key;
  std::string id;     // content-derived
  std::string alias;  // caller-supplied, may be empty
  std::map<int, Value> fields;
};

DimParsed parse_implementation_line(const std::string& line) {
  DimParsed p;
  nlohmann::json doc = nlohmann::json::parse(line, nullptr, false);
  if (doc.is_discarded() || !doc.is_object()) {
    p.reject = "malformed_json";
    return p;
  }
  std::string source_code, language;
  if (!get_text(doc, "data_set_id", true, p.key.data_set_id, p.reject)) return p;
  if (!get_text(doc, "problem_id", true, p.key.problem_id, p.reject)) return p;
  if (!get_text(doc, "source_code", true, source_code, p.reject)) return p;
  if (!get_text(doc, "language", true, language, p.reject)) return p;
  get_text(doc, "id", false, p.alias, p.reject);
  if (!p.reject.empty()) return p;

  std::string metrics;
  bool has_metrics = get_metric_map(doc, "static_metrics", metrics, p.reject);
  if (!p.reject.empty()) return p;
  std::string git;
  bool has_git = get_text(doc, "git_commit_hash", false, git, p.reject);
  if (!p.reject.empty()) return p;

  p.id = content_id(ContentKind::implementation, source_code);
  p.fields[1] = Value::of_text(p.key.data_set_id);
  p.fields[2] = Value::of_text(p.key.problem_id);
  p.fields[3] = Value::of_text(p.id);
  if (!p.alias.empty()) p.fields[4] = Value::of_text(p.alias);
  p.fields[5] = Value::of_text(source_code);
  p.fields[6] = Value::of_text(language);
  if (has_metrics) p.fields[7] = Value::of_text(metrics);
  if (has_git) p.fields[8] = Value::of_text(git);
  return p;
}

DimParsed parse_test_line(const std::string& line) {
  DimParsed p;
  nlohmann::json doc = nlohmann::json::parse(line, nullptr, false);
  if (doc.is_discarded() || !doc.is_object()) {
    p.reject = "malformed_json";
    return p;
  }
  std::string definition, kind, language;
  if (!get_text(doc, "data_set_id", true, p.key.data_set_id, p.reject)) return p;
  if (!get_text(doc, "problem_id", true, p.key.problem_id, p.reject)) return p;
  if (!get_text(doc, "definition", true, definition, p.reject)) return p;
  if (!get_text(doc, "definition_kind", true, kind, p.reject)) return p;
  if (!get_text(doc, "language", true, language, p.reject)) return p;
  get_text(doc, "id", false, p.alias, p.reject);
  if (!p.reject.empty()) return p;
  if (kind != "sequence_sheet" && kind != "mined_unit_test") {
    p.reject = "invalid_field:definition_kind";
    return p;
  }

  p.id = content_id(ContentKind::test, definition);
  p.fields[1] = Value::of_text(p.key.data_set_id);
  p.fields[2] = Value::of_text(p.key.problem_id);
  p.fields[3] = Value::of_text(p.id);
  if (!p.alias.empty()) p.fields[4] = Value::of_text(p.alias);
  p.fields[5] = Value::of_text(definition);
  p.fields[6] = Value::of_text(kind);
  p.fields[7] = Value::of_text(language);
  return p;
}

struct DimSets {
  std::set<std::string> ids;
  std::unordered_map<std::string, std::string> alias_to_id;
};

DimSets load_dim_sets(const ReadView& view, TableId table, const PartitionKey& key) {
  DimSets sets;
  RowBatch batch = view.scan_all(table, key, {3, 4});
  const auto& ids = batch.columns[0];
  const auto& aliases = batch.columns[1];
  for (size_t i = 0; i < ids.size(); ++i) {
    sets.ids.insert(ids[i].text);
    if (!aliases[i].is_null()) sets.alias_to_id[aliases[i].text] = ids[i].text;
  }
  return sets;
}

IngestReport ingest_dimension(const std::shared_ptr<Lakehouse>& lakehouse, TableId table,
                              std::istream& source,
                              const std::function<DimParsed(const std::string&)>& parse_line) {
  IngestReport report;
  auto start = SteadyClock::now();
  ReadView view = lakehouse->read_at();

  std::map<PartitionKey, DimSets> partitions;
  RowBatch accepted;
  const TableSchema schema = view.snapshot().schema(table);
  for (const auto& f : schema.fields) {
    accepted.field_ids.push_back(f.field_id);
    accepted.columns.emplace_back();
  }

  std::vector<std::string> lines;
  std::vector<DimParsed> parsed;
  while (true) {
    auto parse_start = SteadyClock::now();
    if (!read_chunk(source, lines)) break;
    parsed.resize(lines.size());
    parallel_for(lines.size(), [&](size_t i) {
      try {
        parsed[i] = parse_line(lines[i]);
      } catch (const Error& e) {
        parsed[i] = DimParsed{};
        parsed[i].reject = std::string("error:") + error_code_name(e.code());
      }
    });
    report.parse_seconds += seconds_since(parse_start);

    for (auto& p : parsed) {
      ++report.rows_read;
      if (!p.reject.empty()) {
        report.add_reject(p.reject);
        continue;
      }
      auto it = partitions.find(p.key);
      if (it == partitions.end()) {
        it = partitions.emplace(p.key, load_dim_sets(view, table, p.key)).first;
      }
      DimSets& sets = it->second;
      if (!p.alias.empty()) {
        auto alias_it = sets.alias_to_id.find(p.alias);
        if (alias_it != sets.alias_to_id.end() && alias_it->second != p.id) {
          report.add_reject("alias_conflict");
          continue;
        }
      }
      if (sets.ids.count(p.id) > 0) {
        ++report.rows_deduplicated;
        continue;
      }
      sets.ids.insert(p.id);
      if (!p.alias.empty()) sets.alias_to_id[p.alias] = p.id;
      accepted.append_row(p.fields);
      ++report.rows_written;
    }
  }

  if (accepted.row_count() > 0) {
    auto commit_start = SteadyClock::now();
    AppendTransaction txn = lakehouse->begin_append(table);
    txn.stage_rows(accepted);
    txn.commit();
    report.commit_seconds += seconds_since(commit_start);
  }

  report.elapsed_seconds = seconds_since(start);
  report.rows_per_second =
      report.elapsed_seconds > 0 ? report.rows_read / report.elapsed_seconds : 0;
  return report;
}

// ---------------------------------------------------------------------------
// Observation ingestion.

struct ObsParsed {
  std::string reject;
  bool end_marker = false;
  std::string marker_execution;

  PartitionKey key;
  std::string impl_ref, test_ref, execution_id, operation;
  int64_t step_id = 0;
  std::string inputs_canonical, output_canonical;
  std::string language, environment;
  std::string git;
  bool has_git = false;
  std::string metrics_canonical;
  bool has_metrics = false;
};

ObsParsed parse_observation_line(const std::string& line) {
  ObsParsed p;
  nlohmann::json doc = nlohmann::json::parse(line, nullptr, false);
  if (doc.is_discarded() || !doc.is_object()) {
    p.reject = "malformed_json";
    return p;
  }
  if (auto it = doc.find("$end_execution"); it != doc.end()) {
    if (!it->is_string() || it->get<std::string>().empty()) {
      p.reject = "invalid_field:$end_execution";
      return p;
    }
    p.end_marker = true;
    p.marker_execution = it->get<std::string>();
    return p;
  }

  if (!get_text(doc, "data_set_id", true, p.key.data_set_id, p.reject)) return p;
  if (!get_text(doc, "problem_id", true, p.key.problem_id, p.reject)) return p;
  if (!get_text(doc, "implementation_id", true, p.impl_ref, p.reject)) return p;
  if (!get_text(doc, "test_id", true, p.test_ref, p.reject)) return p;
  if (!get_text(doc, "execution_id", true, p.execution_id, p.reject)) return p;
  if (!get_text(doc, "operation", true, p.operation, p.reject)) return p;
  if (!get_text(doc, "language", true, p.language, p.reject)) return p;
  if (!get_text(doc, "environment", true, p.environment, p.reject)) return p;

  auto step_it = doc.find("step_id");
  if (step_it == doc.end()) {
    p.reject = "missing_field:step_id";
    return p;
  }
  if (!step_it->is_number_integer() && !step_it->is_number_unsigned()) {
    p.reject = "invalid_field:step_id";
    return p;
  }
  p.step_id = step_it->get<int64_t>();
  if (p.step_id < 0) {
    p.reject = "invalid_field:step_id";
    return p;
  }

  auto inputs_it = doc.find("inputs");
  if (inputs_it == doc.end()) {
    p.reject = "missing_field:inputs";
    return p;
  }
  if (!inputs_it->is_array()) {
    p.reject = "invalid_field:inputs";
    return p;
  }
  p.inputs_canonical = canonical_dump(*inputs_it);

  auto output_it = doc.find("output");
  if (output_it == doc.end()) {
    p.reject = "missing_field:output";
    return p;
  }
  p.output_canonical = canonical_dump(*output_it);

  p.has_git = get_text(doc, "git_commit_hash", false, p.git, p.reject);
  if (!p.reject.empty()) return p;
  p.has_metrics = get_metric_map(doc, "metrics", p.metrics_canonical, p.reject);
  return p;
}

uint64_t observation_key_hash(const std::string& impl, const std::string& test,
                              const std::string& exec, int64_t step) {
  uint64_t h = fnv1a64(impl.data(), impl.size());
  h = fnv1a64("\0", 1, h);
  h = fnv1a64(test.data(), test.size(), h);
  h = fnv1a64("\0", 1, h);
  h = fnv1a64(exec.data(), exec.size(), h);
  h = fnv1a64(&step, sizeof(step), h);
  return h;
}

struct ObsPartitionState {
  std::set<std::string> impl_refs;  // dimension ids and aliases
  std::set<std::string> test_refs;
  std::unordered_set<uint64_t> seen_keys;
};

ObsPartitionState load_obs_partition_state(const ReadView& view, const PartitionKey& key) {
  ObsPartitionState state;
  {
    RowBatch impls = view.scan_all(TableId::code_implementations, key, {3, 4});
    for (size_t i = 0; i < impls.row_count(); ++i) {
      state.impl_refs.insert(impls.columns[0][i].text);
      if (!impls.columns[1][i].is_null()) state.impl_refs.insert(impls.columns[1][i].text);
    }
  }
  {
    RowBatch tests = view.scan_all(TableId::tests, key, {3, 4});
    for (size_t i = 0; i < tests.row_count(); ++i) {
      state.test_refs.insert(tests.columns[0][i].text);
      if (!tests.columns[1][i].is_null()) state.test_refs.insert(tests.columns[1][i].text);
    }
  }
  {
    // impl, test, execution, step key columns of already-committed rows
    RowBatch obs = view.scan_all(TableId::observations, key, {3, 4, 5, 6});
    state.seen_keys.reserve(obs.row_count() * 2);
    for (size_t i = 0; i < obs.row_count(); ++i) {
      state.seen_keys.insert(observation_key_hash(obs.columns[0][i].text, obs.columns[1][i].text,
                                                  obs.columns[2][i].text,
                                                  obs.columns[3][i].integer));
    }
  }
  return state;
}

struct ExecutionBuffer {
  std::vector<ObsParsed> rows;
  std::unordered_map<int64_t, size_t> by_step;
};

bool same_row_content(const ObsParsed& a, const ObsParsed& b) {
  return a.operation == b.operation && a.inputs_canonical == b.inputs_canonical &&
         a.output_canonical == b.output_canonical && a.language == b.language &&
         a.environment == b.environment && a.has_git == b.has_git && a.git == b.git &&
         a.has_metrics == b.has_metrics && a.metrics_canonical == b.metrics_canonical;
}

}  // namespace

void IngestReport::add_reject(const std::string& reason, uint64_t count) {
  rows_rejected += count;
  reject_reasons[reason] += count;
}

nlohmann::json IngestReport::to_json() const {
  nlohmann::json reasons = nlohmann::json::object();
  for (const auto& [reason, count] : reject_reasons) reasons[reason] = count;
  return {{"rows_read", rows_read},
          {"rows_written", rows_written},
          {"rows_deduplicated", rows_deduplicated},
          {"rows_rejected", rows_rejected},
          {"reject_reasons", std::move(reasons)},
          {"elapsed_seconds", elapsed_seconds},
          {"parse_seconds", parse_seconds},
          {"commit_seconds", commit_seconds},
          {"rows_per_second", rows_per_second}};
}

std::string IngestReport::human() const {
  char buf[256];
  std::snprintf(buf, sizeof(buf),
                "read %llu  written %llu  deduplicated %llu  rejected %llu\n"
                "elapsed %.3fs (parse %.3fs, commit %.3fs)  throughput %.0f rows/s",
                static_cast<unsigned long long>(rows_read),
                static_cast<unsigned long long>(rows_written),
                static_cast<unsigned long long>(rows_deduplicated),
                static_cast<unsigned long long>(rows_rejected), elapsed_seconds, parse_seconds,
                commit_seconds, rows_per_second);
  std::string out = buf;
  for (const auto& [reason, count] : reject_reasons) {
    out += "\n  reject " + reason + ": " + std::to_string(count);
  }
  return out;
}

Ingestor::Ingestor(std::shared_ptr<Lakehouse> lakehouse) : lakehouse_(std::move(lakehouse)) {}

IngestReport Ingestor::ingest_implementations(std::istream& source) {
  return ingest_dimension(lakehouse_, TableId::code_implementations, source,
                          parse_implementation_line);
}

IngestReport Ingestor::ingest_tests(std::istream& source) {
  return ingest_dimension(lakehouse_, TableId::tests, source, parse_test_line);
}

IngestReport Ingestor::ingest_observations(std::istream& source, size_t batch_rows) {
  if (batch_rows == 0) {
    throw Error(ErrorCode::InvalidArgument, "batch_rows must be positive");
  }
  IngestReport report;
  auto start = SteadyClock::now();
  ReadView view = lakehouse_->read_at();
  const TableSchema schema = view.snapshot().schema(TableId::observations);

  std::map<PartitionKey, ObsPartitionState> partitions;
  auto partition_state = [&](const PartitionKey& key) -> ObsPartitionState& {
    auto it = partitions.find(key);
    if (it == partitions.end()) {
      it = partitions.emplace(key, load_obs_partition_state(view, key)).first;
    }
    return it->second;
  };

  RowBatch pending;
  for (const auto& f : schema.fields) {
    pending.field_ids.push_back(f.field_id);
    pending.columns.emplace_back();
  }

  auto commit_pending = [&]() {
    if (pending.row_count() == 0) return;
    auto commit_start = SteadyClock::now();
    AppendTransaction txn = lakehouse_->begin_append(TableId::observations);
    txn.stage_rows(pending);
    txn.commit();
    report.commit_seconds += seconds_since(commit_start);
    for (auto& col : pending.columns) col.clear();
  };

  auto append_accepted = [&](const PartitionKey& key, const ObsParsed& p) {
    std::map<int, Value> fields;
    fields[1] = Value::of_text(key.data_set_id);
    fields[2] = Value::of_text(key.problem_id);
    fields[3] = Value::of_text(p.impl_ref);
    fields[4] = Value::of_text(p.test_ref);
    fields[5] = Value::of_text(p.execution_id);
    fields[6] = Value::of_integer(p.step_id);
    fields[7] = Value::of_text(p.operation);
    fields[8] = Value::of_text(p.inputs_canonical);
    fields[9] = Value::of_text(p.output_canonical);
    fields[10] = Value::of_text(p.language);
    fields[11] = Value::of_text(p.environment);
    if (p.has_git) fields[12] = Value::of_text(p.git);
    if (p.has_metrics) fields[13] = Value::of_text(p.metrics_canonical);
    pending.append_row(fields);
    ++report.rows_written;
  };

  // Executions buffer until their end marker (or stream end) so step
  // contiguity can be validated without unbounded lookahead.
  std::map<std::string, ExecutionBuffer> buffers;
  auto buffer_key = [](const ObsParsed& p) {
    std::string k = p.key.data_set_id;
    k.push_back('\0');
    k += p.key.problem_id;
    k.push_back('\0');
    k += p.impl_ref;
    k.push_back('\0');
    k += p.test_ref;
    k.push_back('\0');
    k += p.execution_id;
    return k;
  };

  auto flush_execution = [&](ExecutionBuffer& buf) {
    if (buf.rows.empty()) return;
    const ObsParsed& first = buf.rows.front();
    size_t n = buf.rows.size();

    for (const auto& row : buf.rows) {
      if (row.language != first.language || row.environment != first.environment ||
          row.has_git != first.has_git || row.git != first.git ||
          row.has_metrics != first.has_metrics ||
          row.metrics_canonical != first.metrics_canonical) {
        report.add_reject("inconsistent_run_context", n);
        return;
      }
    }

    bool contiguous = buf.by_step.size() == n;
    for (size_t i = 0; contiguous && i < n; ++i) {
      contiguous = buf.by_step.count(static_cast<int64_t>(i)) > 0;
    }
    if (!contiguous) {
      report.add_reject("step_gap", n);
      return;
    }

    ObsPartitionState& state = partition_state(first.key);
    if (state.impl_refs.count(first.impl_ref) == 0 || state.test_refs.count(first.test_ref) == 0) {
      report.add_reject("dangling_reference", n);
      return;
    }

    for (size_t step = 0; step < n; ++step) {
      const ObsParsed& row = buf.rows[buf.by_step[static_cast<int64_t>(step)]];
      uint64_t key_hash =
          observation_key_hash(row.impl_ref, row.test_ref, row.execution_id, row.step_id);
      if (!state.seen_keys.insert(key_hash).second) {
        ++report.rows_deduplicated;
        continue;
      }
      append_accepted(first.key, row);
    }
    if (pending.row_count() >= batch_rows) commit_pending();
  };

  std::vector<std::string> lines;
  std::vector<ObsParsed> parsed;
  while (true) {
    auto parse_start = SteadyClock::now();
    if (!read_chunk(source, lines)) break;
    parsed.resize(lines.size());
    parallel_for(lines.size(), [&](size_t i) {
      try {
        parsed[i] = parse_observation_line(lines[i]);
      } catch (const Error& e) {
        parsed[i] = ObsParsed{};
        parsed[i].reject = std::string("error:") + error_code_name(e.code());
      }
    });
    report.parse_seconds += seconds_since(parse_start);

    for (auto& p : parsed) {
      if (p.end_marker) {
        for (auto it = buffers.begin(); it != buffers.end();) {
          if (!it->second.rows.empty() &&
              it->second.rows.front().execution_id == p.marker_execution) {
            flush_execution(it->second);
            it = buffers.erase(it);
          } else {
            ++it;
          }
        }
        continue;
      }
      ++report.rows_read;
      if (!p.reject.empty()) {
        report.add_reject(p.reject);
        continue;
      }
      ExecutionBuffer& buf = buffers[buffer_key(p)];
      auto step_it = buf.by_step.find(p.step_id);
      if (step_it != buf.by_step.end()) {
        if (same_row_content(buf.rows[step_it->second], p)) {
          ++report.rows_deduplicated;  // duplicate line inside one execution
          continue;
        }
        // conflicting duplicate step: keep both, contiguity check rejects
      } else {
        buf.by_step[p.step_id] = buf.rows.size();
      }
      buf.rows.push_back(std::move(p));
    }
  }

  for (auto& [key, buf] : buffers) {
    (void)key;
    flush_execution(buf);
  }
  commit_pending();

  report.elapsed_seconds = seconds_since(start);
  report.rows_per_second =
      report.elapsed_seconds > 0 ? report.rows_read / report.elapsed_seconds : 0;
  return report;
}

}  // namespace obslake
