#include "obslake/ingest.hpp"

#include <gtest/gtest.h>

#include <unistd.h>

#include <filesystem>
#include <sstream>

#include "obslake/canonical.hpp"
#include "obslake/error.hpp"

namespace obslake {
namespace {

namespace fs = std::filesystem;

// The worked queue flow: one Java queue implementation, one FIFO sequence
// sheet, one three-step execution whose step 2 is enqueue(1) -> true.
const char* kQueueImpl = R"x({"data_set_id":"demo","problem_id":"queue","id":"impl_queue_A","source_code":"public class Queue { /* ... */ }","language":"java","static_metrics":{"loc":42}})x";
const char* kQueueTest = R"x({"data_set_id":"demo","problem_id":"queue","id":"test_fifo_1","definition":"create()\nenqueue(1)\ndequeue()","definition_kind":"sequence_sheet","language":"java"})x";

std::string queue_observations() {
  std::string obs;
  obs += R"({"data_set_id":"demo","problem_id":"queue","implementation_id":"impl_queue_A","test_id":"test_fifo_1","execution_id":"run1","step_id":0,"operation":"create","inputs":[],"output":"ok","language":"java","environment":"jdk17","metrics":{"branch_coverage":0.8}})";
  obs += "\n";
  obs += R"({"data_set_id":"demo","problem_id":"queue","implementation_id":"impl_queue_A","test_id":"test_fifo_1","execution_id":"run1","step_id":1,"operation":"size","inputs":[],"output":0,"language":"java","environment":"jdk17","metrics":{"branch_coverage":0.8}})";
  obs += "\n";
  obs += R"({"data_set_id":"demo","problem_id":"queue","implementation_id":"impl_queue_A","test_id":"test_fifo_1","execution_id":"run1","step_id":2,"operation":"enqueue","inputs":[{"value":1}],"output":true,"language":"java","environment":"jdk17","metrics":{"branch_coverage":0.8}})";
  obs += "\n";
  obs += R"({"$end_execution":"run1"})";
  obs += "\n";
  return obs;
}

class IngestTest : public ::testing::Test {
 protected:
  void SetUp() override {
    root_ = fs::temp_directory_path() /
            ("obslake_ingest_" + std::to_string(::getpid()) + "_" +
             ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(root_);
    lakehouse_ = Lakehouse::open(root_, {.create_if_missing = true});
  }
  void TearDown() override { fs::remove_all(root_); }

  static void check_conservation(const IngestReport& report) {
    EXPECT_EQ(report.rows_read,
              report.rows_written + report.rows_deduplicated + report.rows_rejected);
  }

  uint64_t table_rows(TableId table, const PartitionKey& key) {
    return lakehouse_->read_at().scan_all(table, key, {3}).row_count();
  }

  fs::path root_;
  std::shared_ptr<Lakehouse> lakehouse_;
};

TEST_F(IngestTest, QueueExampleEndToEnd) {
  Ingestor ingestor(lakehouse_);
  PartitionKey key{"demo", "queue"};

  std::istringstream impls(std::string(kQueueImpl) + "\n");
  IngestReport impl_report = ingestor.ingest_implementations(impls);
  EXPECT_EQ(impl_report.rows_read, 1u);
  EXPECT_EQ(impl_report.rows_written, 1u);
  check_conservation(impl_report);

  // the alias resolves to the content-derived id on the dimension row
  {
    RowBatch rows = lakehouse_->read_at().scan_all(TableId::code_implementations, key, {3, 4, 5});
    ASSERT_EQ(rows.row_count(), 1u);
    EXPECT_EQ(rows.columns[0][0].text,
              content_id(ContentKind::implementation, "public class Queue { /* ... */ }"));
    EXPECT_EQ(rows.columns[1][0].text, "impl_queue_A");
  }

  std::istringstream tests(std::string(kQueueTest) + "\n");
  IngestReport test_report = ingestor.ingest_tests(tests);
  EXPECT_EQ(test_report.rows_written, 1u);
  check_conservation(test_report);

  std::istringstream obs(queue_observations());
  IngestReport obs_report = ingestor.ingest_observations(obs);
  EXPECT_EQ(obs_report.rows_read, 3u);
  EXPECT_EQ(obs_report.rows_written, 3u);
  EXPECT_EQ(obs_report.rows_rejected, 0u);
  check_conservation(obs_report);

  // step 2 carries ('impl_queue_A','test_fifo_1'), enqueue, [{"value":1}], true
  RowBatch rows = lakehouse_->read_at().scan_all(TableId::observations, key, {3, 4, 6, 7, 8, 9});
  ASSERT_EQ(rows.row_count(), 3u);
  for (size_t i = 0; i < 3; ++i) {
    if (rows.columns[2][i].integer != 2) continue;
    EXPECT_EQ(rows.columns[0][i].text, "impl_queue_A");
    EXPECT_EQ(rows.columns[1][i].text, "test_fifo_1");
    EXPECT_EQ(rows.columns[3][i].text, "enqueue");
    EXPECT_EQ(rows.columns[4][i].text, "[{\"value\":1}]");
    EXPECT_EQ(rows.columns[5][i].text, "true");
  }

  // re-ingesting all three streams is a no-op
  std::istringstream impls2(std::string(kQueueImpl) + "\n");
  IngestReport again = ingestor.ingest_implementations(impls2);
  EXPECT_EQ(again.rows_deduplicated, again.rows_read);
  EXPECT_EQ(again.rows_written, 0u);
  check_conservation(again);
  EXPECT_EQ(table_rows(TableId::code_implementations, key), 1u);

  std::istringstream obs2(queue_observations());
  IngestReport obs_again = ingestor.ingest_observations(obs2);
  EXPECT_EQ(obs_again.rows_deduplicated, 3u);
  EXPECT_EQ(obs_again.rows_written, 0u);
  check_conservation(obs_again);
  EXPECT_EQ(table_rows(TableId::observations, key), 3u);
}

TEST_F(IngestTest, RejectsAreCountedPerLineNeverAborting) {
  Ingestor ingestor(lakehouse_);
  std::string stream;
  stream += "{\"this is\": not json\n";                                     // malformed
  stream += R"({"data_set_id":"demo","source_code":"x","language":"java"})" "\n";  // no problem_id
  stream += std::string(kQueueImpl) + "\n";                                 // fine
  stream += R"({"data_set_id":"demo","problem_id":"q","source_code":"","language":"java"})" "\n";
  std::istringstream in(stream);
  IngestReport report = ingestor.ingest_implementations(in);
  EXPECT_EQ(report.rows_read, 4u);
  EXPECT_EQ(report.rows_written, 1u);
  EXPECT_EQ(report.rows_rejected, 3u);
  EXPECT_EQ(report.reject_reasons.at("malformed_json"), 1u);
  EXPECT_EQ(report.reject_reasons.at("missing_field:problem_id"), 1u);
  EXPECT_EQ(report.reject_reasons.at("invalid_field:source_code"), 1u);
  check_conservation(report);
}

TEST_F(IngestTest, UnknownDefinitionKindRejected) {
  Ingestor ingestor(lakehouse_);
  std::istringstream in(
      R"({"data_set_id":"d","problem_id":"p","definition":"x","definition_kind":"screenplay","language":"java"})"
      "\n");
  IngestReport report = ingestor.ingest_tests(in);
  EXPECT_EQ(report.rows_rejected, 1u);
  EXPECT_EQ(report.reject_reasons.at("invalid_field:definition_kind"), 1u);
  check_conservation(report);
}

TEST_F(IngestTest, DanglingReferencesRejectedPerExecution) {
  Ingestor ingestor(lakehouse_);
  std::istringstream impls(std::string(kQueueImpl) + "\n");
  ingestor.ingest_implementations(impls);
  std::istringstream tests(std::string(kQueueTest) + "\n");
  ingestor.ingest_tests(tests);

  std::string obs = queue_observations();
  obs +=
      R"({"data_set_id":"demo","problem_id":"queue","implementation_id":"impl_ghost","test_id":"test_fifo_1","execution_id":"run2","step_id":0,"operation":"create","inputs":[],"output":"ok","language":"java","environment":"jdk17"})"
      "\n";
  std::istringstream in(obs);
  IngestReport report = ingestor.ingest_observations(in);
  EXPECT_EQ(report.rows_written, 3u);
  EXPECT_EQ(report.rows_rejected, 1u);
  EXPECT_EQ(report.reject_reasons.at("dangling_reference"), 1u);
  check_conservation(report);
}

TEST_F(IngestTest, StepGapRejectsWholeExecution) {
  Ingestor ingestor(lakehouse_);
  std::istringstream impls(std::string(kQueueImpl) + "\n");
  ingestor.ingest_implementations(impls);
  std::istringstream tests(std::string(kQueueTest) + "\n");
  ingestor.ingest_tests(tests);

  std::string obs;
  obs += R"({"data_set_id":"demo","problem_id":"queue","implementation_id":"impl_queue_A","test_id":"test_fifo_1","execution_id":"gap","step_id":0,"operation":"create","inputs":[],"output":"ok","language":"java","environment":"jdk17"})";
  obs += "\n";
  obs += R"({"data_set_id":"demo","problem_id":"queue","implementation_id":"impl_queue_A","test_id":"test_fifo_1","execution_id":"gap","step_id":2,"operation":"size","inputs":[],"output":1,"language":"java","environment":"jdk17"})";
  obs += "\n";
  std::istringstream in(obs);
  IngestReport report = ingestor.ingest_observations(in);
  EXPECT_EQ(report.rows_written, 0u);
  EXPECT_EQ(report.rows_rejected, 2u);
  EXPECT_EQ(report.reject_reasons.at("step_gap"), 2u);
  check_conservation(report);
}

TEST_F(IngestTest, InconsistentRunContextRejected) {
  Ingestor ingestor(lakehouse_);
  std::istringstream impls(std::string(kQueueImpl) + "\n");
  ingestor.ingest_implementations(impls);
  std::istringstream tests(std::string(kQueueTest) + "\n");
  ingestor.ingest_tests(tests);

  std::string obs;
  obs += R"({"data_set_id":"demo","problem_id":"queue","implementation_id":"impl_queue_A","test_id":"test_fifo_1","execution_id":"mix","step_id":0,"operation":"create","inputs":[],"output":"ok","language":"java","environment":"jdk17","metrics":{"branch_coverage":0.5}})";
  obs += "\n";
  obs += R"({"data_set_id":"demo","problem_id":"queue","implementation_id":"impl_queue_A","test_id":"test_fifo_1","execution_id":"mix","step_id":1,"operation":"size","inputs":[],"output":0,"language":"java","environment":"jdk17","metrics":{"branch_coverage":0.9}})";
  obs += "\n";
  std::istringstream in(obs);
  IngestReport report = ingestor.ingest_observations(in);
  EXPECT_EQ(report.rows_rejected, 2u);
  EXPECT_EQ(report.reject_reasons.at("inconsistent_run_context"), 1u + 1u);
  check_conservation(report);
}

TEST_F(IngestTest, BatchingCommitsEveryBatchRows) {
  Ingestor ingestor(lakehouse_);
  std::istringstream impls(std::string(kQueueImpl) + "\n");
  ingestor.ingest_implementations(impls);
  std::istringstream tests(std::string(kQueueTest) + "\n");
  ingestor.ingest_tests(tests);
  int64_t before = lakehouse_->latest_snapshot_id();

  std::string obs;
  for (int run = 0; run < 10; ++run) {
    std::string exec = "run" + std::to_string(run);
    for (int s = 0; s < 4; ++s) {
      obs += R"({"data_set_id":"demo","problem_id":"queue","implementation_id":"impl_queue_A",)";
      obs += R"("test_id":"test_fifo_1","execution_id":")" + exec + "\",";
      obs += "\"step_id\":" + std::to_string(s) + ",";
      obs += R"("operation":"op","inputs":[],"output":1,"language":"java","environment":"jdk17"})";
      obs += "\n";
    }
    obs += "{\"$end_execution\":\"" + exec + "\"}\n";
  }
  std::istringstream in(obs);
  IngestReport report = ingestor.ingest_observations(in, /*batch_rows=*/8);
  EXPECT_EQ(report.rows_written, 40u);
  check_conservation(report);
  int64_t commits = lakehouse_->latest_snapshot_id() - before;
  EXPECT_EQ(commits, 5);  // 40 rows, flushed in 8-row batches
  EXPECT_EQ(table_rows(TableId::observations, {"demo", "queue"}), 40u);
}

TEST_F(IngestTest, ExecutionWithoutMarkerFlushesAtStreamEnd) {
  Ingestor ingestor(lakehouse_);
  std::istringstream impls(std::string(kQueueImpl) + "\n");
  ingestor.ingest_implementations(impls);
  std::istringstream tests(std::string(kQueueTest) + "\n");
  ingestor.ingest_tests(tests);

  std::string obs = queue_observations();
  // strip the trailing marker line
  obs.erase(obs.rfind("{\"$end_execution\""));
  std::istringstream in(obs);
  IngestReport report = ingestor.ingest_observations(in);
  EXPECT_EQ(report.rows_written, 3u);
  check_conservation(report);
}

TEST_F(IngestTest, AliasConflictRejected) {
  Ingestor ingestor(lakehouse_);
  std::string stream;
  stream += std::string(kQueueImpl) + "\n";
  // same alias, different source content
  stream += R"({"data_set_id":"demo","problem_id":"queue","id":"impl_queue_A","source_code":"class Other {}","language":"java"})";
  stream += "\n";
  std::istringstream in(stream);
  IngestReport report = ingestor.ingest_implementations(in);
  EXPECT_EQ(report.rows_written, 1u);
  EXPECT_EQ(report.rows_rejected, 1u);
  EXPECT_EQ(report.reject_reasons.at("alias_conflict"), 1u);
  check_conservation(report);
}

TEST_F(IngestTest, ReferentialIntegrityAcrossCommittedSnapshots) {
  Ingestor ingestor(lakehouse_);
  std::istringstream impls(std::string(kQueueImpl) + "\n");
  ingestor.ingest_implementations(impls);
  std::istringstream tests(std::string(kQueueTest) + "\n");
  ingestor.ingest_tests(tests);
  std::istringstream obs(queue_observations());
  ingestor.ingest_observations(obs);

  // every committed observation resolves against the dimension tables
  ReadView view = lakehouse_->read_at();
  PartitionKey key{"demo", "queue"};
  RowBatch dims = view.scan_all(TableId::code_implementations, key, {3, 4});
  std::set<std::string> impl_refs;
  for (size_t i = 0; i < dims.row_count(); ++i) {
    impl_refs.insert(dims.columns[0][i].text);
    if (!dims.columns[1][i].is_null()) impl_refs.insert(dims.columns[1][i].text);
  }
  RowBatch obs_rows = view.scan_all(TableId::observations, key, {3});
  for (size_t i = 0; i < obs_rows.row_count(); ++i) {
    EXPECT_TRUE(impl_refs.count(obs_rows.columns[0][i].text) == 1);
  }
}

}  // namespace
}  // namespace obslake
