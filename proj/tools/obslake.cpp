#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "obslake/bench.hpp"
#include "obslake/error.hpp"
#include "obslake/ingest.hpp"
#include "obslake/parallel.hpp"
#include "obslake/srm.hpp"
#include "obslake/workload.hpp"

namespace {

using namespace obslake;

struct GlobalOpts {
  std::string root;
  std::string format = "table";
  std::optional<int64_t> at;
  int threads = -1;  // -1: library default
};

std::shared_ptr<Lakehouse> open_root(const GlobalOpts& opts, bool create = false) {
  if (opts.root.empty()) {
    throw Error(ErrorCode::InvalidArgument,
                "no lakehouse root given (use --root or OBSLAKE_ROOT)");
  }
  return Lakehouse::open(opts.root, {.create_if_missing = create});
}

ReadView view_at(const GlobalOpts& opts, const std::shared_ptr<Lakehouse>& lakehouse) {
  return lakehouse->read_at(opts.at);
}

void emit(const GlobalOpts& opts, const nlohmann::json& doc, const std::string& table_text) {
  if (opts.format == "json") {
    std::cout << doc.dump(2) << "\n";
  } else {
    std::cout << table_text;
  }
}

std::string ingest_human(const char* what, const IngestReport& report) {
  return std::string(what) + ": " + report.human() + "\n";
}

IngestReport run_ingest(const std::string& file,
                        const std::function<IngestReport(std::istream&)>& fn) {
  if (file == "-") return fn(std::cin);
  std::ifstream in(file, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoFailure, "cannot open " + file);
  return fn(in);
}

EquivalenceConfig make_cfg(double tolerance, const std::string& exception_mode) {
  EquivalenceConfig cfg;
  cfg.float_tolerance = tolerance;
  cfg.exception_mode = exception_mode_from_name(exception_mode);
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"obslake - embedded observation lakehouse"};
  app.require_subcommand(1);
  app.fallthrough();  // global flags may follow the subcommand

  GlobalOpts opts;
  if (const char* env_root = std::getenv("OBSLAKE_ROOT")) opts.root = env_root;
  app.add_option("--root", opts.root, "Lakehouse root directory (env OBSLAKE_ROOT)");
  app.add_option("--format", opts.format, "Output format: table or json")
      ->check(CLI::IsMember({"table", "json"}));
  int64_t at_flag = -1;
  app.add_option("--at", at_flag, "Pin reads to a snapshot id (time travel)");
  app.add_option("--threads", opts.threads, "0: serial kernels; otherwise OpenMP default");

  auto* init = app.add_subcommand("init", "Create an empty lakehouse at --root");

  std::string ingest_file;
  size_t batch_rows = 65536;
  auto* ingest_impls =
      app.add_subcommand("ingest-impls", "Ingest implementations JSONL (file or -)");
  ingest_impls->add_option("file", ingest_file)->required();
  auto* ingest_tests = app.add_subcommand("ingest-tests", "Ingest tests JSONL (file or -)");
  ingest_tests->add_option("file", ingest_file)->required();
  auto* ingest_obs = app.add_subcommand("ingest-obs", "Ingest observations JSONL (file or -)");
  ingest_obs->add_option("file", ingest_file)->required();
  ingest_obs->add_option("--batch-rows", batch_rows, "Rows per commit batch");

  auto* partitions = app.add_subcommand("partitions", "List partitions with row/byte counts");
  std::string partitions_table = "observations";
  partitions->add_option("--table", partitions_table)
      ->check(CLI::IsMember({"observations", "code_implementations", "tests"}));

  std::string ds, prob, subject_impl, commits_csv, srm_mode = "output";
  double tolerance = 0.0;
  std::string exception_mode = "exact";

  auto* srm = app.add_subcommand("srm", "Reconstruct the SRM view of one problem");
  srm->add_option("data_set_id", ds)->required();
  srm->add_option("problem_id", prob)->required();
  srm->add_option("--mode", srm_mode)->check(CLI::IsMember({"output", "full", "joined"}));

  auto* cluster = app.add_subcommand("cluster", "Behavioral equivalence classes of one problem");
  cluster->add_option("data_set_id", ds)->required();
  cluster->add_option("problem_id", prob)->required();
  cluster->add_option("--tolerance", tolerance, "Absolute numeric tolerance");
  cluster->add_option("--exception-mode", exception_mode)
      ->check(CLI::IsMember({"exact", "type_only", "any_exception"}));

  auto* oracle = app.add_subcommand("oracle", "Consensus oracle (majority behavior)");
  oracle->add_option("data_set_id", ds)->required();
  oracle->add_option("problem_id", prob)->required();
  oracle->add_option("--tolerance", tolerance);
  oracle->add_option("--exception-mode", exception_mode)
      ->check(CLI::IsMember({"exact", "type_only", "any_exception"}));

  auto* assess = app.add_subcommand("assess", "n-version assessment of one implementation");
  assess->add_option("data_set_id", ds)->required();
  assess->add_option("problem_id", prob)->required();
  assess->add_option("implementation_id", subject_impl)->required();
  assess->add_option("--tolerance", tolerance);
  assess->add_option("--exception-mode", exception_mode)
      ->check(CLI::IsMember({"exact", "type_only", "any_exception"}));

  auto* drift = app.add_subcommand("drift", "Behavioral drift along a commit lineage");
  drift->add_option("data_set_id", ds)->required();
  drift->add_option("problem_id", prob)->required();
  drift->add_option("--commits", commits_csv, "Comma-separated commit lineage")->required();

  auto* snapshots = app.add_subcommand("snapshots", "List snapshots");

  std::string column_table, column_name, column_type;
  auto* add_column_cmd = app.add_subcommand("add-column", "Add a nullable column to a table");
  add_column_cmd->add_option("table", column_table)
      ->required()
      ->check(CLI::IsMember({"observations", "code_implementations", "tests"}));
  add_column_cmd->add_option("name", column_name)->required();
  add_column_cmd->add_option("type", column_type)
      ->required()
      ->check(CLI::IsMember({"text", "integer", "decimal", "canonical_value", "metric_map"}));

  int gen_problems = 50;
  uint64_t gen_seed = 42;
  std::string gen_out;
  auto* generate = app.add_subcommand("generate", "Generate a synthetic JSONL workload");
  generate->add_option("--problems", gen_problems)->check(CLI::PositiveNumber);
  generate->add_option("--seed", gen_seed);
  generate->add_option("--out", gen_out, "Output directory")->required();

  int bench_problems = 50, bench_reps = 10;
  uint64_t bench_seed = 42;
  std::string bench_dir;
  bool bench_contention = false;
  auto* bench = app.add_subcommand("bench", "Run the desk-scale benchmark");
  bench->add_option("--problems", bench_problems)->check(CLI::PositiveNumber);
  bench->add_option("--seed", bench_seed);
  bench->add_option("--reps", bench_reps)->check(CLI::PositiveNumber);
  bench->add_option("--work-dir", bench_dir, "Scratch directory (default: <root>/bench)");
  bench->add_flag("--contention", bench_contention, "Also exercise 2-writer commit contention");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  if (at_flag >= 0) opts.at = at_flag;
  if (opts.threads == 0) set_default_exec_mode(ExecMode::serial);

  try {
    if (init->parsed()) {
      open_root(opts, /*create=*/true);
      emit(opts, {{"root", opts.root}, {"initialized", true}},
           "initialized lakehouse at " + opts.root + "\n");
      return 0;
    }
    if (ingest_impls->parsed() || ingest_tests->parsed() || ingest_obs->parsed()) {
      auto lakehouse = open_root(opts);
      Ingestor ingestor(lakehouse);
      IngestReport report;
      const char* what;
      if (ingest_impls->parsed()) {
        report = run_ingest(ingest_file,
                            [&](std::istream& in) { return ingestor.ingest_implementations(in); });
        what = "implementations";
      } else if (ingest_tests->parsed()) {
        report =
            run_ingest(ingest_file, [&](std::istream& in) { return ingestor.ingest_tests(in); });
        what = "tests";
      } else {
        report = run_ingest(ingest_file, [&](std::istream& in) {
          return ingestor.ingest_observations(in, batch_rows);
        });
        what = "observations";
      }
      emit(opts, report.to_json(), ingest_human(what, report));
      return 0;
    }
    if (partitions->parsed()) {
      auto lakehouse = open_root(opts);
      ReadView view = view_at(opts, lakehouse);
      nlohmann::json doc = nlohmann::json::array();
      std::ostringstream text;
      for (const auto& stat : view.list_partitions(table_from_name(partitions_table))) {
        doc.push_back({{"data_set_id", stat.key.data_set_id},
                       {"problem_id", stat.key.problem_id},
                       {"row_count", stat.row_count},
                       {"byte_size", stat.byte_size},
                       {"segments", stat.segment_count}});
        text << stat.key.data_set_id << "/" << stat.key.problem_id << "  rows=" << stat.row_count
             << "  bytes=" << stat.byte_size << "  segments=" << stat.segment_count << "\n";
      }
      emit(opts, doc, text.str());
      return 0;
    }
    if (srm->parsed()) {
      auto lakehouse = open_root(opts);
      ReadView view = view_at(opts, lakehouse);
      SRMView result = srm_mode == "joined"  ? srm_joined_view(view, {ds, prob})
                       : srm_mode == "full" ? srm_full_view(view, {ds, prob})
                                            : srm_output_view(view, {ds, prob});
      std::ostringstream text;
      text << "SRM " << ds << "/" << prob << ": " << result.tests.size() << " tests x "
           << result.implementations.size() << " implementations, " << result.cells.size()
           << " cells\n";
      emit(opts, result.to_json(), text.str());
      return 0;
    }
    if (cluster->parsed()) {
      auto lakehouse = open_root(opts);
      ReadView view = view_at(opts, lakehouse);
      auto clusters = cluster_implementations(view, {ds, prob}, make_cfg(tolerance, exception_mode));
      std::ostringstream text;
      for (const auto& c : clusters) {
        text << "class " << c.class_id << " size " << c.size << " rep " << c.representative << "\n";
      }
      emit(opts, clusters_to_json(clusters), text.str());
      return 0;
    }
    if (oracle->parsed()) {
      auto lakehouse = open_root(opts);
      ReadView view = view_at(opts, lakehouse);
      ConsensusOracle result = consensus_oracle(view, {ds, prob}, make_cfg(tolerance, exception_mode));
      std::ostringstream text;
      text << "consensus oracle " << ds << "/" << prob << ": " << result.cells.size() << " cells\n";
      emit(opts, result.to_json(), text.str());
      return 0;
    }
    if (assess->parsed()) {
      auto lakehouse = open_root(opts);
      ReadView view = view_at(opts, lakehouse);
      AssessReport result =
          nversion_assess(view, {ds, prob}, make_cfg(tolerance, exception_mode), subject_impl);
      std::ostringstream text;
      text << result.subject << ": agree " << result.agree << ", deviate " << result.deviate
           << ", missing " << result.missing << ", ratio " << result.agreement_ratio << "\n";
      emit(opts, result.to_json(), text.str());
      return 0;
    }
    if (drift->parsed()) {
      auto lakehouse = open_root(opts);
      ReadView view = view_at(opts, lakehouse);
      std::vector<std::string> lineage;
      std::stringstream commits(commits_csv);
      std::string commit;
      while (std::getline(commits, commit, ',')) {
        if (!commit.empty()) lineage.push_back(commit);
      }
      DriftReport result = behavioral_drift(view, {ds, prob}, {}, lineage);
      std::ostringstream text;
      text << "drift over " << lineage.size() << " commits (" << result.common_tests
           << " common tests): " << result.drifted.size() << " drifting pairs\n";
      emit(opts, result.to_json(), text.str());
      return 0;
    }
    if (snapshots->parsed()) {
      auto lakehouse = open_root(opts);
      nlohmann::json doc = nlohmann::json::array();
      std::ostringstream text;
      for (const auto& s : lakehouse->snapshots()) {
        nlohmann::json row = {{"snapshot_id", s.snapshot_id},
                              {"timestamp", s.timestamp},
                              {"row_counts", s.row_counts}};
        row["parent_id"] = s.parent_id ? nlohmann::json(*s.parent_id) : nlohmann::json();
        doc.push_back(std::move(row));
        text << "snapshot " << s.snapshot_id << " at " << s.timestamp;
        for (const auto& [table, rows] : s.row_counts) text << "  " << table << "=" << rows;
        text << "\n";
      }
      emit(opts, doc, text.str());
      return 0;
    }
    if (add_column_cmd->parsed()) {
      auto lakehouse = open_root(opts);
      TableSchema schema = lakehouse->add_column(table_from_name(column_table), column_name,
                                                 field_type_from_name(column_type));
      emit(opts, schema.to_json(),
           "added " + column_name + " to " + column_table + "; schema_id now " +
               std::to_string(schema.schema_id) + "\n");
      return 0;
    }
    if (generate->parsed()) {
      WorkloadPlan plan = plan_workload(gen_problems, gen_seed);
      WorkloadCounts counts = generate_workload_files(plan, gen_out);
      nlohmann::json doc = {{"out", gen_out},
                            {"problems", gen_problems},
                            {"seed", gen_seed},
                            {"implementations", counts.implementations},
                            {"tests", counts.tests},
                            {"sequences", counts.sequences},
                            {"observation_rows", counts.observation_rows}};
      std::ostringstream text;
      text << "generated " << counts.observation_rows << " observation rows ("
           << counts.implementations << " impls, " << counts.sequences << " sequences) into "
           << gen_out << "\n";
      emit(opts, doc, text.str());
      return 0;
    }
    if (bench->parsed()) {
      BenchConfig config;
      config.problems = bench_problems;
      config.seed = bench_seed;
      config.repetitions = bench_reps;
      config.contention = bench_contention;
      if (!bench_dir.empty()) {
        config.work_dir = bench_dir;
      } else if (!opts.root.empty()) {
        config.work_dir = std::filesystem::path(opts.root) / "bench";
      } else {
        throw Error(ErrorCode::InvalidArgument, "bench needs --work-dir or --root");
      }
      BenchReport report = run_benchmark(config);
      emit(opts, report.doc, report.human);
      return 0;
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  std::cerr << "no subcommand\n";
  return 2;
}
