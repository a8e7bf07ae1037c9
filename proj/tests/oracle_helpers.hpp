// Brute-force reference implementations used as oracles. These re-derive
// every analytical result from raw JSONL with plain nested loops and pairwise
// comparisons, independent of the segment/catalog/srm code paths they check.
#pragma once

#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "obslake/canonical.hpp"

namespace obslake::oracle {

struct RawObs {
  std::string data_set_id, problem_id, impl, test, exec;
  int64_t step = 0;
  std::string operation;
  std::string inputs;  // canonical
  std::string output;  // canonical
};

inline std::vector<RawObs> read_observations_jsonl(std::istream& in,
                                                   const std::string& problem_filter = "") {
  std::vector<RawObs> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    nlohmann::json doc = nlohmann::json::parse(line, nullptr, false);
    if (doc.is_discarded() || doc.contains("$end_execution")) continue;
    RawObs row;
    row.problem_id = doc.value("problem_id", "");
    if (!problem_filter.empty() && row.problem_id != problem_filter) continue;
    row.data_set_id = doc.value("data_set_id", "");
    row.impl = doc.value("implementation_id", "");
    row.test = doc.value("test_id", "");
    row.exec = doc.value("execution_id", "");
    row.step = doc.value("step_id", int64_t(0));
    row.operation = doc.value("operation", "");
    row.inputs = canonical_dump(doc.at("inputs"));
    row.output = canonical_dump(doc.at("output"));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline std::vector<RawObs> read_observations_file(const std::filesystem::path& path,
                                                  const std::string& problem_filter = "") {
  std::ifstream in(path, std::ios::binary);
  return read_observations_jsonl(in, problem_filter);
}

// (test, impl) -> outputs of the latest execution, ordered by step.
using CellOutputs = std::map<std::pair<std::string, std::string>, std::vector<std::string>>;

inline CellOutputs brute_force_output_cells(const std::vector<RawObs>& rows) {
  // latest execution per (test, impl), chosen exactly as the engine defines
  // it: greatest execution_id
  std::map<std::pair<std::string, std::string>, std::string> latest;
  for (const auto& row : rows) {
    auto key = std::make_pair(row.test, row.impl);
    auto it = latest.find(key);
    if (it == latest.end() || it->second < row.exec) latest[key] = row.exec;
  }
  std::map<std::pair<std::string, std::string>, std::map<int64_t, std::string>> staged;
  for (const auto& row : rows) {
    auto key = std::make_pair(row.test, row.impl);
    if (latest[key] != row.exec) continue;
    staged[key][row.step] = row.output;
  }
  CellOutputs cells;
  for (auto& [key, by_step] : staged) {
    auto& outputs = cells[key];
    for (auto& [step, output] : by_step) {
      (void)step;
      outputs.push_back(output);
    }
  }
  return cells;
}

// impl -> test -> outputs (latest execution).
inline std::map<std::string, std::map<std::string, std::vector<std::string>>> brute_force_traces(
    const std::vector<RawObs>& rows) {
  std::map<std::string, std::map<std::string, std::vector<std::string>>> traces;
  for (auto& [key, outputs] : brute_force_output_cells(rows)) {
    traces[key.second][key.first] = outputs;
  }
  return traces;
}

inline bool traces_equal(const std::map<std::string, std::vector<std::string>>& a,
                         const std::map<std::string, std::vector<std::string>>& b,
                         const EquivalenceConfig& cfg) {
  if (a.size() != b.size()) return false;
  auto it_a = a.begin();
  auto it_b = b.begin();
  for (; it_a != a.end(); ++it_a, ++it_b) {
    if (it_a->first != it_b->first) return false;
    if (it_a->second.size() != it_b->second.size()) return false;
    for (size_t i = 0; i < it_a->second.size(); ++i) {
      if (!output_equivalent(it_a->second[i], it_b->second[i], cfg)) return false;
    }
  }
  return true;
}

// Pairwise-equivalence partition (no hashing anywhere): the clustering
// oracle. Returns member lists sorted by (size desc, smallest member).
inline std::vector<std::vector<std::string>> brute_force_clusters(const std::vector<RawObs>& rows,
                                                                  const EquivalenceConfig& cfg = {}) {
  auto traces = brute_force_traces(rows);
  std::vector<std::vector<std::string>> clusters;
  std::vector<const std::map<std::string, std::vector<std::string>>*> reps;
  for (const auto& [impl, trace] : traces) {  // std::map: ascending impl order
    bool placed = false;
    for (size_t c = 0; c < clusters.size(); ++c) {
      if (traces_equal(trace, *reps[c], cfg)) {
        clusters[c].push_back(impl);
        placed = true;
        break;
      }
    }
    if (!placed) {
      clusters.push_back({impl});
      reps.push_back(&trace);
    }
  }
  std::sort(clusters.begin(), clusters.end(), [](const auto& a, const auto& b) {
    if (a.size() != b.size()) return a.size() > b.size();
    return a.front() < b.front();
  });
  return clusters;
}

struct OracleCell {
  std::string majority;
  uint32_t support = 0;
  uint32_t total = 0;
  bool tied = false;
};

// Counting consensus oracle: one vote per implementation's latest execution.
inline std::map<std::pair<std::string, int64_t>, OracleCell> brute_force_consensus(
    const std::vector<RawObs>& rows, const std::string* exclude_impl = nullptr) {
  auto cells = brute_force_output_cells(rows);
  std::map<std::pair<std::string, int64_t>, std::map<std::string, uint32_t>> votes;
  for (const auto& [key, outputs] : cells) {
    if (exclude_impl != nullptr && key.second == *exclude_impl) continue;
    for (size_t step = 0; step < outputs.size(); ++step) {
      votes[{key.first, static_cast<int64_t>(step)}][outputs[step]] += 1;
    }
  }
  std::map<std::pair<std::string, int64_t>, OracleCell> oracle;
  for (const auto& [cell_key, counts] : votes) {
    OracleCell cell;
    for (const auto& [output, count] : counts) {
      cell.total += count;
      if (count > cell.support) cell.support = count;
    }
    uint32_t winners = 0;
    for (const auto& [output, count] : counts) {
      if (count == cell.support) {
        if (winners == 0) cell.majority = output;
        ++winners;
      }
    }
    cell.tied = winners >= 2;
    oracle[cell_key] = cell;
  }
  return oracle;
}

}  // namespace obslake::oracle
