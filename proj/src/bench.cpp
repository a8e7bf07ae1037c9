#include "obslake/bench.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <numeric>
#include <sstream>
#include <thread>

#include "obslake/error.hpp"
#include "obslake/ingest.hpp"
#include "obslake/parallel.hpp"
#include "obslake/srm.hpp"
#include "obslake/workload.hpp"

namespace obslake {

namespace {

using SteadyClock = std::chrono::steady_clock;

double seconds_since(SteadyClock::time_point start) {
  return std::chrono::duration<double>(SteadyClock::now() - start).count();
}

struct LatencySeries {
  std::vector<double> per_problem_avg_ms;

  nlohmann::json summarize() const {
    std::vector<double> sorted = per_problem_avg_ms;
    std::sort(sorted.begin(), sorted.end());
    double mean = sorted.empty()
                      ? 0
                      : std::accumulate(sorted.begin(), sorted.end(), 0.0) / sorted.size();
    auto pct = [&](double q) {
      if (sorted.empty()) return 0.0;
      size_t idx = std::min(sorted.size() - 1, static_cast<size_t>(q * sorted.size()));
      return sorted[idx];
    };
    return {{"mean_ms", mean},
            {"p50_ms", pct(0.50)},
            {"p95_ms", pct(0.95)},
            {"max_ms", sorted.empty() ? 0.0 : sorted.back()}};
  }
};

bool paths_within_partition(const std::vector<std::filesystem::path>& paths,
                            const std::filesystem::path& partition_dir) {
  for (const auto& p : paths) {
    auto rel = std::filesystem::relative(p, partition_dir);
    if (rel.empty() || rel.native().starts_with("..")) return false;
  }
  return true;
}

}  // namespace

BenchReport run_benchmark(const BenchConfig& config) {
  if (config.work_dir.empty()) {
    throw Error(ErrorCode::InvalidArgument, "bench requires a work directory");
  }
  nlohmann::json doc;
  std::string human;
  char line[512];

  doc["config"] = {{"problems", config.problems},
                   {"seed", config.seed},
                   {"repetitions", config.repetitions},
                   {"batch_rows", config.batch_rows},
                   {"threads", max_threads()}};

  // --- workload generation -------------------------------------------------
  std::filesystem::path workload_dir = config.work_dir / "workload";
  WorkloadPlan plan = plan_workload(config.problems, config.seed);
  auto t0 = SteadyClock::now();
  WorkloadCounts counts = generate_workload_files(plan, workload_dir);
  double gen_seconds = seconds_since(t0);
  doc["workload"] = {{"problems", config.problems},
                     {"implementations", counts.implementations},
                     {"tests", counts.tests},
                     {"sequences", counts.sequences},
                     {"observation_rows", counts.observation_rows},
                     {"generation_seconds", gen_seconds}};
  std::snprintf(line, sizeof(line),
                "workload: %d problems, %llu impls, %llu sequences, %llu rows (%.1fs)\n",
                config.problems, static_cast<unsigned long long>(counts.implementations),
                static_cast<unsigned long long>(counts.sequences),
                static_cast<unsigned long long>(counts.observation_rows), gen_seconds);
  human += line;

  // --- ingestion ------------------------------------------------------------
  std::filesystem::path lake_dir = config.work_dir / "lakehouse";
  auto lakehouse = Lakehouse::open(lake_dir, {.create_if_missing = true});
  Ingestor ingestor(lakehouse);

  auto open_stream = [&](const char* name) {
    return std::ifstream(workload_dir / name, std::ios::binary);
  };

  t0 = SteadyClock::now();
  std::ifstream impls_in = open_stream("implementations.jsonl");
  IngestReport impl_report = ingestor.ingest_implementations(impls_in);
  std::ifstream tests_in = open_stream("tests.jsonl");
  IngestReport test_report = ingestor.ingest_tests(tests_in);
  double bulk_seconds = seconds_since(t0);

  std::ifstream obs_in = open_stream("observations.jsonl");
  IngestReport obs_report = ingestor.ingest_observations(obs_in, config.batch_rows);

  doc["ingest"] = {{"bulk_import_seconds", bulk_seconds},
                   {"implementations", impl_report.to_json()},
                   {"tests", test_report.to_json()},
                   {"observations", obs_report.to_json()}};
  std::snprintf(line, sizeof(line),
                "bulk import (impls+tests): %.1fs; observations: %llu rows in %.1fs "
                "(%.0f rows/s)\n",
                bulk_seconds, static_cast<unsigned long long>(obs_report.rows_written),
                obs_report.elapsed_seconds, obs_report.rows_per_second);
  human += line;

  // --- storage footprint ----------------------------------------------------
  {
    ReadView view = lakehouse->read_at();
    nlohmann::json tables = nlohmann::json::object();
    for (TableId table : kAllTables) {
      uint64_t rows = 0, bytes = 0;
      for (const auto& stat : view.list_partitions(table)) {
        rows += stat.row_count;
        bytes += stat.byte_size;
      }
      tables[table_name(table)] = {
          {"rows", rows},
          {"bytes", bytes},
          {"bytes_per_row", rows > 0 ? static_cast<double>(bytes) / rows : 0.0}};
    }
    doc["storage"] = tables;
    double bpr = tables["observations"]["bytes_per_row"].get<double>();
    std::snprintf(line, sizeof(line), "observations storage: %.2f bytes/row\n", bpr);
    human += line;
  }

  // --- cold-cache query latencies -------------------------------------------
  LatencySeries q1, q2, q3;
  size_t pruning_violations = 0;
  size_t pruning_checks = 0;
  for (const auto& prob : plan.problems) {
    PartitionKey key{plan.data_set_id, prob.problem_id};
    std::filesystem::path partition_dir = lake_dir / "observations" /
                                          encode_partition_component(key.data_set_id) /
                                          encode_partition_component(key.problem_id);
    double q1_total = 0, q2_total = 0, q3_total = 0;
    for (int rep = 0; rep < config.repetitions; ++rep) {
      // Fresh handle per repetition approximates a cold cache.
      auto cold = Lakehouse::open(lake_dir, {});
      ReadView view = cold->read_at();

      begin_segment_path_capture();
      auto t = SteadyClock::now();
      SRMView output_view = srm_output_view(view, key);
      q1_total += seconds_since(t) * 1000.0;
      auto opened = end_segment_path_capture();
      ++pruning_checks;
      if (!paths_within_partition(opened, partition_dir)) ++pruning_violations;
      if (output_view.cells.empty()) {
        throw Error(ErrorCode::InvalidArgument, "bench partition unexpectedly empty");
      }

      begin_segment_path_capture();
      t = SteadyClock::now();
      auto clusters = cluster_implementations(view, key);
      q2_total += seconds_since(t) * 1000.0;
      opened = end_segment_path_capture();
      ++pruning_checks;
      if (!paths_within_partition(opened, partition_dir)) ++pruning_violations;
      if (clusters.empty()) {
        throw Error(ErrorCode::InvalidArgument, "bench clustering unexpectedly empty");
      }

      begin_segment_path_capture();
      t = SteadyClock::now();
      SRMView joined = srm_joined_view(view, key);
      q3_total += seconds_since(t) * 1000.0;
      opened = end_segment_path_capture();
      ++pruning_checks;
      // Q3 legitimately opens the dimension partitions of the same key.
      bool ok = true;
      for (const auto& p : opened) {
        bool in_any = false;
        for (TableId table : kAllTables) {
          std::filesystem::path dir = lake_dir / table_name(table) /
                                      encode_partition_component(key.data_set_id) /
                                      encode_partition_component(key.problem_id);
          auto rel = std::filesystem::relative(p, dir);
          if (!rel.empty() && !rel.native().starts_with("..")) in_any = true;
        }
        ok = ok && in_any;
      }
      if (!ok) ++pruning_violations;
      if (joined.implementation_info.empty()) {
        throw Error(ErrorCode::InvalidArgument, "bench join unexpectedly empty");
      }
    }
    q1.per_problem_avg_ms.push_back(q1_total / config.repetitions);
    q2.per_problem_avg_ms.push_back(q2_total / config.repetitions);
    q3.per_problem_avg_ms.push_back(q3_total / config.repetitions);
  }
  doc["queries"] = {{"repetitions", config.repetitions},
                    {"q1_output_view", q1.summarize()},
                    {"q2_clustering", q2.summarize()},
                    {"q3_joined_view", q3.summarize()},
                    {"pruning_checks", pruning_checks},
                    {"pruning_violations", pruning_violations}};
  std::snprintf(line, sizeof(line),
                "Q1 %.1f ms  Q2 %.1f ms  Q3 %.1f ms (means of per-problem averages, %d cold "
                "reps); pruning %zu/%zu clean\n",
                q1.summarize()["mean_ms"].get<double>(), q2.summarize()["mean_ms"].get<double>(),
                q3.summarize()["mean_ms"].get<double>(), config.repetitions,
                pruning_checks - pruning_violations, pruning_checks);
  human += line;

  // --- serial vs parallel kernels -------------------------------------------
  if (config.kernels) {
    PartitionKey key{plan.data_set_id, plan.problems.front().problem_id};
    auto time_mode = [&](ExecMode mode) {
      ExecMode saved = default_exec_mode();
      set_default_exec_mode(mode);
      nlohmann::json result;

      WorkloadPlan small = plan_workload(4, config.seed + 1);
      std::ostringstream sink;
      auto t = SteadyClock::now();
      generate_workload(small, nullptr, nullptr, &sink);
      result["generate_4_problems_s"] = seconds_since(t);

      auto cold = Lakehouse::open(lake_dir, {});
      ReadView view = cold->read_at();
      t = SteadyClock::now();
      RowBatch batch = view.scan_all(TableId::observations, key, {3, 4, 5, 6, 9});
      result["partition_scan_s"] = seconds_since(t);
      result["partition_scan_rows"] = batch.row_count();

      t = SteadyClock::now();
      auto fingerprints = fingerprint_implementations(view, key);
      result["fingerprint_s"] = seconds_since(t);
      result["fingerprint_count"] = fingerprints.size();

      set_default_exec_mode(saved);
      return result;
    };
    nlohmann::json serial = time_mode(ExecMode::serial);
    nlohmann::json parallel = time_mode(ExecMode::parallel);
    doc["kernels"] = {{"serial", serial}, {"parallel", parallel}};
    std::snprintf(line, sizeof(line),
                  "kernels (serial -> parallel, %d threads): scan %.3fs -> %.3fs, "
                  "fingerprint %.3fs -> %.3fs, generate %.3fs -> %.3fs\n",
                  max_threads(), serial["partition_scan_s"].get<double>(),
                  parallel["partition_scan_s"].get<double>(),
                  serial["fingerprint_s"].get<double>(),
                  parallel["fingerprint_s"].get<double>(),
                  serial["generate_4_problems_s"].get<double>(),
                  parallel["generate_4_problems_s"].get<double>());
    human += line;
  }

  // --- optional commit contention -------------------------------------------
  if (config.contention) {
    auto contended = Lakehouse::open(config.work_dir / "contention_lakehouse",
                                     {.create_if_missing = true});
    int64_t before = contended->latest_snapshot_id();
    auto t = SteadyClock::now();
    auto writer = [&](int writer_id) {
      for (int i = 0; i < config.contention_commits; ++i) {
        RowBatch batch;
        batch.field_ids = {1, 2, 3, 4, 5, 6, 7};
        batch.columns.resize(7);
        batch.columns[0].push_back(Value::of_text("contention"));
        batch.columns[1].push_back(Value::of_text("p" + std::to_string(writer_id)));
        batch.columns[2].push_back(Value::of_text("impl"));
        batch.columns[3].push_back(Value::of_text("alias"));
        batch.columns[4].push_back(Value::of_text("src"));
        batch.columns[5].push_back(Value::of_text("java"));
        batch.columns[6].push_back(Value());
        AppendTransaction txn = contended->begin_append(TableId::code_implementations);
        txn.stage_rows(batch);
        txn.commit();
      }
    };
    std::thread t1(writer, 1), t2(writer, 2);
    t1.join();
    t2.join();
    double contention_seconds = seconds_since(t);
    int64_t after = contended->latest_snapshot_id();
    doc["contention"] = {{"writers", 2},
                         {"commits_per_writer", config.contention_commits},
                         {"snapshots_created", after - before},
                         {"elapsed_seconds", contention_seconds}};
    std::snprintf(line, sizeof(line), "contention: 2 writers x %d commits -> %lld snapshots in %.1fs\n",
                  config.contention_commits, static_cast<long long>(after - before),
                  contention_seconds);
    human += line;
  }

  BenchReport report;
  report.doc = std::move(doc);
  report.human = std::move(human);
  return report;
}

}  // namespace obslake
