#include "obslake/srm.hpp"

#include <algorithm>
#include <set>

#include "obslake/error.hpp"
#include "obslake/parallel.hpp"

namespace obslake {

namespace {

// Observation fields by baseline field id.
constexpr int kImplField = 3;
constexpr int kTestField = 4;
constexpr int kExecField = 5;
constexpr int kStepField = 6;
constexpr int kOpField = 7;
constexpr int kInputsField = 8;
constexpr int kOutputField = 9;

struct Execution {
  std::string execution_id;
  std::vector<SRMStepCell> steps;
};

struct LoadedPartition {
  std::vector<std::string> tests;  // sorted distinct recorded refs
  std::vector<std::string> impls;
  // impl ref -> test ref -> latest execution
  std::map<std::string, std::map<std::string, Execution>> cells;
};

LoadedPartition load_partition(const ReadView& view, const PartitionKey& key, bool with_stimuli) {
  std::vector<int> projection = {kImplField, kTestField, kExecField, kStepField, kOutputField};
  if (with_stimuli) {
    projection.push_back(kOpField);
    projection.push_back(kInputsField);
  }
  RowBatch rows = view.scan_all(TableId::observations, key, projection);

  LoadedPartition lp;
  std::set<std::string> tests, impls;
  size_t n = rows.row_count();
  const auto& impl_col = rows.columns[0];
  const auto& test_col = rows.columns[1];
  const auto& exec_col = rows.columns[2];
  const auto& step_col = rows.columns[3];
  const auto& out_col = rows.columns[4];

  for (size_t i = 0; i < n; ++i) {
    const std::string& impl = impl_col[i].text;
    const std::string& test = test_col[i].text;
    const std::string& exec = exec_col[i].text;
    tests.insert(test);
    impls.insert(impl);

    Execution& cell = lp.cells[impl][test];
    if (cell.execution_id != exec) {
      if (exec < cell.execution_id) continue;  // keep only the latest execution
      cell.execution_id = exec;
      cell.steps.clear();
    }
    SRMStepCell step;
    step.step_id = step_col[i].integer;
    step.output = out_col[i].text;
    if (with_stimuli) {
      step.operation = rows.columns[5][i].text;
      step.inputs = rows.columns[6][i].text;
    }
    cell.steps.push_back(std::move(step));
  }

  for (auto& [impl, by_test] : lp.cells) {
    (void)impl;
    for (auto& [test, cell] : by_test) {
      (void)test;
      std::sort(cell.steps.begin(), cell.steps.end(),
                [](const SRMStepCell& a, const SRMStepCell& b) { return a.step_id < b.step_id; });
    }
  }
  lp.tests.assign(tests.begin(), tests.end());
  lp.impls.assign(impls.begin(), impls.end());
  return lp;
}

SRMView build_view(const ReadView& view, const PartitionKey& key, SRMMode mode) {
  bool with_stimuli = mode != SRMMode::output_view;
  LoadedPartition lp = load_partition(view, key, with_stimuli);
  SRMView srm;
  srm.partition = key;
  srm.mode = mode;
  srm.tests = std::move(lp.tests);
  srm.implementations = std::move(lp.impls);
  for (auto& [impl, by_test] : lp.cells) {
    for (auto& [test, cell] : by_test) {
      SRMCell out;
      out.execution_id = std::move(cell.execution_id);
      out.steps = std::move(cell.steps);
      srm.cells.emplace(std::make_pair(test, impl), std::move(out));
    }
  }
  return srm;
}

// Dimension rows addressed by recorded reference (content id or alias).
struct DimensionIndex {
  // reference -> row index
  std::map<std::string, size_t> by_ref;
  std::vector<std::map<int, Value>> rows;

  const std::map<int, Value>* resolve(const std::string& ref) const {
    auto it = by_ref.find(ref);
    return it == by_ref.end() ? nullptr : &rows[it->second];
  }
};

DimensionIndex load_dimension(const ReadView& view, TableId table, const PartitionKey& key) {
  const TableSchema& schema = view.snapshot().schema(table);
  std::vector<int> projection;
  for (const auto& f : schema.fields) projection.push_back(f.field_id);
  RowBatch rows = view.scan_all(table, key, projection);

  DimensionIndex index;
  int id_field = 3;     // implementation_id / test_id
  int alias_field = 4;  // optional caller-supplied alias
  int id_col = rows.column_index(id_field);
  int alias_col = rows.column_index(alias_field);
  for (size_t i = 0; i < rows.row_count(); ++i) {
    std::map<int, Value> row;
    for (size_t c = 0; c < projection.size(); ++c) row[projection[c]] = rows.columns[c][i];
    size_t idx = index.rows.size();
    index.rows.push_back(std::move(row));
    index.by_ref[rows.columns[id_col][i].text] = idx;
    if (!rows.columns[alias_col][i].is_null()) {
      index.by_ref[rows.columns[alias_col][i].text] = idx;
    }
  }
  return index;
}

nlohmann::json parse_or_string(const std::string& canonical) {
  nlohmann::json doc = nlohmann::json::parse(canonical, nullptr, false);
  return doc.is_discarded() ? nlohmann::json(canonical) : doc;
}

nlohmann::json value_to_json(const Value& v) {
  switch (v.kind) {
    case ValueKind::null:
      return nullptr;
    case ValueKind::text:
      return v.text;
    case ValueKind::integer:
      return v.integer;
    case ValueKind::decimal:
      return v.decimal;
  }
  return nullptr;
}

// Normalized output traces used by tolerant clustering and drift.
struct Trace {
  // test ref -> outputs of the latest execution, in step order
  std::map<std::string, std::vector<std::string>> by_test;
};

Trace make_trace(const std::map<std::string, Execution>& by_test, const EquivalenceConfig& cfg) {
  Trace trace;
  for (const auto& [test, cell] : by_test) {
    auto& outputs = trace.by_test[test];
    outputs.reserve(cell.steps.size());
    for (const auto& step : cell.steps) {
      outputs.push_back(normalize_for_grouping(step.output, cfg));
    }
  }
  return trace;
}

bool traces_equivalent(const Trace& a, const Trace& b, const EquivalenceConfig& cfg) {
  if (a.by_test.size() != b.by_test.size()) return false;
  auto it_a = a.by_test.begin();
  auto it_b = b.by_test.begin();
  for (; it_a != a.by_test.end(); ++it_a, ++it_b) {
    if (it_a->first != it_b->first) return false;  // different test subsets
    if (it_a->second.size() != it_b->second.size()) return false;
    for (size_t i = 0; i < it_a->second.size(); ++i) {
      if (!output_equivalent(it_a->second[i], it_b->second[i], cfg)) return false;
    }
  }
  return true;
}

using VoteCells = std::map<ConsensusCellKey, std::map<std::string, uint32_t>>;

VoteCells collect_votes(const LoadedPartition& lp, const EquivalenceConfig& cfg,
                        const std::string* exclude) {
  VoteCells votes;
  for (const auto& [impl, by_test] : lp.cells) {
    if (exclude != nullptr && impl == *exclude) continue;
    for (const auto& [test, cell] : by_test) {
      for (const auto& step : cell.steps) {
        votes[{test, step.step_id}][normalize_for_grouping(step.output, cfg)] += 1;
      }
    }
  }
  return votes;
}

ConsensusOracle oracle_from_votes(const PartitionKey& key, const VoteCells& votes) {
  ConsensusOracle oracle;
  oracle.partition = key;
  for (const auto& [cell_key, outputs] : votes) {
    ConsensusCell cell;
    uint32_t best = 0;
    for (const auto& [output, count] : outputs) {
      cell.total += count;
      if (count > best) best = count;
    }
    uint32_t at_best = 0;
    for (const auto& [output, count] : outputs) {
      if (count == best) {
        if (at_best == 0) cell.majority_output = output;  // lexicographically smallest
        ++at_best;
      }
    }
    cell.support = best;
    cell.tied = at_best >= 2;
    oracle.cells.emplace(cell_key, std::move(cell));
  }
  return oracle;
}

}  // namespace

SRMView srm_output_view(const ReadView& view, const PartitionKey& key) {
  return build_view(view, key, SRMMode::output_view);
}

SRMView srm_full_view(const ReadView& view, const PartitionKey& key) {
  return build_view(view, key, SRMMode::full_view);
}

SRMView srm_joined_view(const ReadView& view, const PartitionKey& key) {
  SRMView srm = build_view(view, key, SRMMode::joined_view);
  DimensionIndex impls = load_dimension(view, TableId::code_implementations, key);
  DimensionIndex tests = load_dimension(view, TableId::tests, key);

  for (const auto& impl : srm.implementations) {
    const auto* row = impls.resolve(impl);
    if (row == nullptr) {
      throw Error(ErrorCode::ReferentialGap,
                  "observation references unknown implementation " + impl);
    }
    srm.implementation_info[impl] = {
        {"implementation_id", row->at(3).text},
        {"alias", value_to_json(row->at(4))},
        {"source_code", row->at(5).text},
        {"language", row->at(6).text},
        {"static_metrics", row->at(7).is_null() ? nlohmann::json() : parse_or_string(row->at(7).text)},
        {"git_commit_hash", value_to_json(row->at(8))}};
  }
  for (const auto& test : srm.tests) {
    const auto* row = tests.resolve(test);
    if (row == nullptr) {
      throw Error(ErrorCode::ReferentialGap, "observation references unknown test " + test);
    }
    srm.test_info[test] = {{"test_id", row->at(3).text},
                           {"alias", value_to_json(row->at(4))},
                           {"definition", row->at(5).text},
                           {"definition_kind", row->at(6).text},
                           {"language", row->at(7).text}};
  }
  return srm;
}

std::vector<BehaviorFingerprint> fingerprint_implementations(const ReadView& view,
                                                             const PartitionKey& key,
                                                             const EquivalenceConfig& cfg) {
  LoadedPartition lp = load_partition(view, key, false);
  std::vector<BehaviorFingerprint> fingerprints(lp.impls.size());

  parallel_for(lp.impls.size(), [&](size_t i) {
    const std::string& impl = lp.impls[i];
    const auto& by_test = lp.cells.at(impl);
    Sha256 hasher;
    uint64_t trace_length = 0;
    // The trace walks the partition's full test list; absent tests hash an
    // explicit absence sentinel so missing coverage never aliases real
    // behavior (and "missing" differs from a null output).
    for (const auto& test : lp.tests) {
      auto it = by_test.find(test);
      if (it == by_test.end()) {
        hasher.update("A", 1);
        hasher.update(test);
        hasher.update("\0", 1);
        continue;
      }
      hasher.update("T", 1);
      hasher.update(test);
      hasher.update("\0", 1);
      for (const auto& step : it->second.steps) {
        std::string normalized = normalize_for_grouping(step.output, cfg);
        hasher.update("O", 1);
        hasher.update(normalized);
        hasher.update("\0", 1);
        ++trace_length;
      }
    }
    fingerprints[i] = {impl, hasher.hex_digest(), trace_length};
  });
  return fingerprints;
}

std::vector<BehaviorCluster> cluster_implementations(const ReadView& view, const PartitionKey& key,
                                                     const EquivalenceConfig& cfg) {
  std::vector<BehaviorCluster> clusters;

  if (cfg.float_tolerance == 0.0) {
    std::vector<BehaviorFingerprint> fingerprints = fingerprint_implementations(view, key, cfg);
    std::map<std::string, std::vector<std::string>> by_digest;
    for (const auto& fp : fingerprints) by_digest[fp.digest].push_back(fp.implementation_id);
    for (auto& [digest, members] : by_digest) {
      (void)digest;
      BehaviorCluster cluster;
      std::sort(members.begin(), members.end());
      cluster.members = std::move(members);
      cluster.representative = cluster.members.front();
      cluster.size = cluster.members.size();
      clusters.push_back(std::move(cluster));
    }
  } else {
    // Tolerant equivalence is not transitive; greedy representative chaining
    // in implementation-id order keeps the result order-canonical.
    LoadedPartition lp = load_partition(view, key, false);
    std::vector<Trace> traces(lp.impls.size());
    parallel_for(lp.impls.size(), [&](size_t i) {
      traces[i] = make_trace(lp.cells.at(lp.impls[i]), cfg);
    });
    std::vector<size_t> rep_index;
    for (size_t i = 0; i < lp.impls.size(); ++i) {
      bool placed = false;
      for (size_t c = 0; c < clusters.size(); ++c) {
        if (traces_equivalent(traces[i], traces[rep_index[c]], cfg)) {
          clusters[c].members.push_back(lp.impls[i]);
          clusters[c].size += 1;
          placed = true;
          break;
        }
      }
      if (!placed) {
        BehaviorCluster cluster;
        cluster.members = {lp.impls[i]};
        cluster.representative = lp.impls[i];
        cluster.size = 1;
        clusters.push_back(std::move(cluster));
        rep_index.push_back(i);
      }
    }
  }

  std::sort(clusters.begin(), clusters.end(), [](const BehaviorCluster& a, const BehaviorCluster& b) {
    if (a.size != b.size) return a.size > b.size;
    return a.members.front() < b.members.front();
  });
  for (size_t i = 0; i < clusters.size(); ++i) {
    clusters[i].class_id = static_cast<int>(i);
    clusters[i].representative = clusters[i].members.front();
  }
  return clusters;
}

ConsensusOracle consensus_oracle(const ReadView& view, const PartitionKey& key,
                                 const EquivalenceConfig& cfg) {
  LoadedPartition lp = load_partition(view, key, false);
  return oracle_from_votes(key, collect_votes(lp, cfg, nullptr));
}

AssessReport nversion_assess(const ReadView& view, const PartitionKey& key,
                             const EquivalenceConfig& cfg, const std::string& subject) {
  LoadedPartition lp = load_partition(view, key, false);
  auto subject_it = lp.cells.find(subject);
  if (subject_it == lp.cells.end()) {
    throw Error(ErrorCode::UnknownImplementation,
                subject + " has no observations in this partition");
  }

  ConsensusOracle oracle = oracle_from_votes(key, collect_votes(lp, cfg, &subject));

  std::map<ConsensusCellKey, const std::string*> subject_outputs;
  for (const auto& [test, cell] : subject_it->second) {
    for (const auto& step : cell.steps) {
      subject_outputs[{test, step.step_id}] = &step.output;
    }
  }

  AssessReport report;
  report.subject = subject;
  for (const auto& [cell_key, cell] : oracle.cells) {
    auto it = subject_outputs.find(cell_key);
    if (it == subject_outputs.end()) {
      report.verdicts[cell_key] = CellVerdict::missing;
      ++report.missing;
      continue;
    }
    bool agree = output_equivalent(normalize_for_grouping(*it->second, cfg), cell.majority_output,
                                   cfg);
    report.verdicts[cell_key] = agree ? CellVerdict::agree : CellVerdict::deviate;
    agree ? ++report.agree : ++report.deviate;
  }
  uint64_t denom = report.agree + report.deviate;
  report.agreement_ratio = denom == 0 ? 1.0 : static_cast<double>(report.agree) / denom;
  return report;
}

DriftReport behavioral_drift(const ReadView& view, const PartitionKey& key,
                             const EquivalenceConfig& cfg,
                             const std::vector<std::string>& lineage) {
  if (lineage.empty()) {
    throw Error(ErrorCode::InvalidArgument, "lineage must name at least one commit");
  }
  LoadedPartition lp = load_partition(view, key, false);
  DimensionIndex impl_dim = load_dimension(view, TableId::code_implementations, key);
  DimensionIndex test_dim = load_dimension(view, TableId::tests, key);

  auto resolved_test = [&](const std::string& ref) {
    const auto* row = test_dim.resolve(ref);
    return row == nullptr ? ref : row->at(3).text;
  };

  // commit -> observation impl refs whose dimension row carries that commit
  std::map<std::string, std::vector<std::string>> commit_impls;
  for (const auto& impl : lp.impls) {
    const auto* row = impl_dim.resolve(impl);
    if (row == nullptr || row->at(8).is_null()) continue;
    commit_impls[row->at(8).text].push_back(impl);
  }

  // Tests common to every commit in the lineage, compared by resolved id so
  // alias/idn mixtures do not split the set.
  std::set<std::string> common;
  bool first_commit = true;
  for (const auto& commit : lineage) {
    auto it = commit_impls.find(commit);
    if (it == commit_impls.end()) {
      throw Error(ErrorCode::UnknownCommit, "no implementation rows for commit " + commit);
    }
    std::set<std::string> tests;
    for (const auto& impl : it->second) {
      for (const auto& [test, cell] : lp.cells.at(impl)) {
        (void)cell;
        tests.insert(resolved_test(test));
      }
    }
    if (first_commit) {
      common = std::move(tests);
      first_commit = false;
    } else {
      std::set<std::string> next;
      std::set_intersection(common.begin(), common.end(), tests.begin(), tests.end(),
                            std::inserter(next, next.begin()));
      common = std::move(next);
    }
  }
  if (common.empty()) {
    throw Error(ErrorCode::EmptyCommonTestSet, "lineage shares no common tests");
  }

  DriftReport report;
  report.lineage = lineage;
  report.common_tests = common.size();
  for (const auto& commit : lineage) {
    const auto& impls = commit_impls.at(commit);
    Sha256 hasher;
    for (const auto& test : common) {
      // Deterministic representative: the smallest implementation ref of the
      // commit that executed this test.
      const Execution* chosen = nullptr;
      for (const auto& impl : impls) {
        for (const auto& [ref, cell] : lp.cells.at(impl)) {
          if (resolved_test(ref) != test) continue;
          if (chosen == nullptr) chosen = &cell;
        }
        if (chosen != nullptr) break;
      }
      hasher.update("T", 1);
      hasher.update(test);
      hasher.update("\0", 1);
      if (chosen == nullptr) {
        hasher.update("A", 1);
        continue;
      }
      for (const auto& step : chosen->steps) {
        std::string normalized = normalize_for_grouping(step.output, cfg);
        hasher.update("O", 1);
        hasher.update(normalized);
        hasher.update("\0", 1);
      }
    }
    report.fingerprints.push_back(hasher.hex_digest());
  }
  for (size_t i = 0; i + 1 < report.fingerprints.size(); ++i) {
    if (report.fingerprints[i] != report.fingerprints[i + 1]) {
      report.drifted.emplace_back(i, i + 1);
    }
  }
  return report;
}

nlohmann::json SRMView::to_json() const {
  nlohmann::json cells_doc = nlohmann::json::array();
  for (const auto& [key, cell] : cells) {
    nlohmann::json steps = nlohmann::json::array();
    for (const auto& step : cell.steps) {
      nlohmann::json step_doc;
      step_doc["step_id"] = step.step_id;
      if (mode != SRMMode::output_view) {
        step_doc["operation"] = step.operation;
        step_doc["inputs"] = parse_or_string(step.inputs);
      }
      step_doc["output"] = parse_or_string(step.output);
      steps.push_back(std::move(step_doc));
    }
    cells_doc.push_back({{"test_id", key.first},
                         {"implementation_id", key.second},
                         {"execution_id", cell.execution_id},
                         {"steps", std::move(steps)}});
  }
  nlohmann::json doc = {
      {"data_set_id", partition.data_set_id},
      {"problem_id", partition.problem_id},
      {"mode", mode == SRMMode::output_view  ? "output_view"
               : mode == SRMMode::full_view ? "full_view"
                                            : "joined_view"},
      {"tests", tests},
      {"implementations", implementations},
      {"cells", std::move(cells_doc)}};
  if (mode == SRMMode::joined_view) {
    doc["implementation_info"] = implementation_info;
    doc["test_info"] = test_info;
  }
  return doc;
}

nlohmann::json BehaviorFingerprint::to_json() const {
  return {{"implementation_id", implementation_id},
          {"digest", digest},
          {"trace_length", trace_length}};
}

nlohmann::json clusters_to_json(const std::vector<BehaviorCluster>& clusters) {
  nlohmann::json doc = nlohmann::json::array();
  for (const auto& c : clusters) {
    doc.push_back({{"class_id", c.class_id},
                   {"size", c.size},
                   {"representative", c.representative},
                   {"members", c.members}});
  }
  return doc;
}

nlohmann::json ConsensusOracle::to_json() const {
  nlohmann::json cells_doc = nlohmann::json::array();
  for (const auto& [key, cell] : cells) {
    cells_doc.push_back({{"test_id", key.test_id},
                         {"step_id", key.step_id},
                         {"majority_output", parse_or_string(cell.majority_output)},
                         {"support", cell.support},
                         {"total", cell.total},
                         {"tied", cell.tied}});
  }
  return {{"data_set_id", partition.data_set_id},
          {"problem_id", partition.problem_id},
          {"cells", std::move(cells_doc)}};
}

nlohmann::json AssessReport::to_json() const {
  nlohmann::json cells_doc = nlohmann::json::array();
  for (const auto& [key, verdict] : verdicts) {
    cells_doc.push_back({{"test_id", key.test_id},
                         {"step_id", key.step_id},
                         {"verdict", verdict == CellVerdict::agree     ? "agree"
                                     : verdict == CellVerdict::deviate ? "deviate"
                                                                       : "missing"}});
  }
  return {{"subject", subject},
          {"agree", agree},
          {"deviate", deviate},
          {"missing", missing},
          {"agreement_ratio", agreement_ratio},
          {"cells", std::move(cells_doc)}};
}

nlohmann::json DriftReport::to_json() const {
  nlohmann::json commits = nlohmann::json::array();
  for (size_t i = 0; i < lineage.size(); ++i) {
    commits.push_back({{"commit", lineage[i]}, {"fingerprint", fingerprints[i]}});
  }
  nlohmann::json pairs = nlohmann::json::array();
  for (const auto& [a, b] : drifted) pairs.push_back({a, b});
  return {{"commits", std::move(commits)},
          {"drifted_pairs", std::move(pairs)},
          {"common_tests", common_tests}};
}

}  // namespace obslake
