#include "obslake/lakehouse.hpp"

#include <gtest/gtest.h>

#include <unistd.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <thread>

#include "obslake/error.hpp"

namespace obslake {
namespace {

namespace fs = std::filesystem;

class CatalogTest : public ::testing::Test {
 protected:
  void SetUp() override {
    root_ = fs::temp_directory_path() /
            ("obslake_catalog_" + std::to_string(::getpid()) + "_" +
             ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(root_);
  }
  void TearDown() override { fs::remove_all(root_); }

  fs::path root_;
};

RowBatch impl_rows(const std::string& ds, const std::string& prob, int count, int base = 0) {
  RowBatch rows;
  rows.field_ids = {1, 2, 3, 4, 5, 6, 7, 8};
  rows.columns.resize(8);
  for (int i = 0; i < count; ++i) {
    int n = base + i;
    rows.columns[0].push_back(Value::of_text(ds));
    rows.columns[1].push_back(Value::of_text(prob));
    rows.columns[2].push_back(Value::of_text("impl_" + std::to_string(n)));
    rows.columns[3].push_back(Value());
    rows.columns[4].push_back(Value::of_text("source " + std::to_string(n)));
    rows.columns[5].push_back(Value::of_text("java"));
    rows.columns[6].push_back(Value());
    rows.columns[7].push_back(Value());
  }
  return rows;
}

uint64_t count_rows(const ReadView& view, TableId table, const PartitionKey& key) {
  return view.scan_all(table, key, {3}).row_count();
}

TEST_F(CatalogTest, FreshLakehouseStartsEmpty) {
  auto lakehouse = Lakehouse::open(root_, {.create_if_missing = true});
  EXPECT_EQ(lakehouse->latest_snapshot_id(), 0);
  ReadView view = lakehouse->read_at();
  for (TableId table : kAllTables) {
    EXPECT_EQ(view.snapshot().schema(table).schema_id, 0);
    EXPECT_TRUE(view.list_partitions(table).empty());
  }
}

TEST_F(CatalogTest, MissingRootRejectedWithoutCreate) {
  try {
    Lakehouse::open(root_, {});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NotALakehouse);
  }
}

TEST_F(CatalogTest, VersionTooNewRejected) {
  Lakehouse::open(root_, {.create_if_missing = true});
  std::ofstream marker(root_ / "obslake.json", std::ios::trunc);
  marker << "{\"format\":\"obslake\",\"version\":99}";
  marker.close();
  try {
    Lakehouse::open(root_, {});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::VersionTooNew);
  }
}

TEST_F(CatalogTest, ReopenAfterOneCommitSeesSnapshotOne) {
  {
    auto lakehouse = Lakehouse::open(root_, {.create_if_missing = true});
    AppendTransaction txn = lakehouse->begin_append(TableId::code_implementations);
    txn.stage_rows(impl_rows("ds", "p1", 3));
    Snapshot snap = txn.commit();
    EXPECT_EQ(snap.snapshot_id, 1);
  }
  auto reopened = Lakehouse::open(root_, {});
  EXPECT_EQ(reopened->latest_snapshot_id(), 1);
  EXPECT_EQ(count_rows(reopened->read_at(), TableId::code_implementations, {"ds", "p1"}), 3u);
}

TEST_F(CatalogTest, EmptyTransactionRejected) {
  auto lakehouse = Lakehouse::open(root_, {.create_if_missing = true});
  AppendTransaction txn = lakehouse->begin_append(TableId::tests);
  try {
    txn.commit();
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::EmptyTransaction);
  }
}

TEST_F(CatalogTest, SnapshotIsolationAndTimeTravel) {
  auto lakehouse = Lakehouse::open(root_, {.create_if_missing = true});
  {
    AppendTransaction txn = lakehouse->begin_append(TableId::code_implementations);
    txn.stage_rows(impl_rows("ds", "p1", 2, 0));
    txn.commit();
  }
  ReadView at_s1 = lakehouse->read_at(1);
  ReadView open_view = lakehouse->read_at();
  {
    AppendTransaction txn = lakehouse->begin_append(TableId::code_implementations);
    txn.stage_rows(impl_rows("ds", "p1", 5, 100));
    txn.commit();
  }
  // pinned views are unaffected by the later commit
  EXPECT_EQ(count_rows(at_s1, TableId::code_implementations, {"ds", "p1"}), 2u);
  EXPECT_EQ(count_rows(open_view, TableId::code_implementations, {"ds", "p1"}), 2u);
  EXPECT_EQ(count_rows(lakehouse->read_at(), TableId::code_implementations, {"ds", "p1"}), 7u);
  EXPECT_EQ(count_rows(lakehouse->read_at(2), TableId::code_implementations, {"ds", "p1"}), 7u);

  // append-only containment: S1 results are a prefix subset of S2 results
  RowBatch s1_rows = lakehouse->read_at(1).scan_all(TableId::code_implementations, {"ds", "p1"}, {3});
  RowBatch s2_rows = lakehouse->read_at(2).scan_all(TableId::code_implementations, {"ds", "p1"}, {3});
  ASSERT_LE(s1_rows.row_count(), s2_rows.row_count());
  for (size_t i = 0; i < s1_rows.row_count(); ++i) {
    EXPECT_TRUE(s1_rows.columns[0][i] == s2_rows.columns[0][i]);
  }

  try {
    lakehouse->read_at(42);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::UnknownSnapshot);
  }
}

std::map<std::string, uint64_t> segment_checksums(const fs::path& root) {
  std::map<std::string, uint64_t> sums;
  for (const auto& entry : fs::recursive_directory_iterator(root)) {
    if (!entry.is_regular_file() || entry.path().extension() != ".seg") continue;
    std::ifstream in(entry.path(), std::ios::binary);
    std::string bytes(std::istreambuf_iterator<char>(in), {});
    sums[entry.path().string()] = fnv1a64(bytes.data(), bytes.size());
  }
  return sums;
}

TEST_F(CatalogTest, AddColumnRewritesNothingAndReadsNull) {
  auto lakehouse = Lakehouse::open(root_, {.create_if_missing = true});
  {
    AppendTransaction txn = lakehouse->begin_append(TableId::observations);
    RowBatch rows;
    rows.field_ids = {1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11};
    rows.columns.resize(11);
    for (int i = 0; i < 4; ++i) {
      rows.columns[0].push_back(Value::of_text("ds"));
      rows.columns[1].push_back(Value::of_text("p1"));
      rows.columns[2].push_back(Value::of_text("impl"));
      rows.columns[3].push_back(Value::of_text("test"));
      rows.columns[4].push_back(Value::of_text("e1"));
      rows.columns[5].push_back(Value::of_integer(i));
      rows.columns[6].push_back(Value::of_text("op"));
      rows.columns[7].push_back(Value::of_text("[]"));
      rows.columns[8].push_back(Value::of_text("true"));
      rows.columns[9].push_back(Value::of_text("java"));
      rows.columns[10].push_back(Value::of_text("env"));
    }
    txn.stage_rows(rows);
    txn.commit();
  }

  auto before = segment_checksums(root_);
  TableSchema schema = lakehouse->add_column(TableId::observations, "energy_joules",
                                             FieldType::decimal);
  EXPECT_EQ(schema.schema_id, 1);
  auto after = segment_checksums(root_);
  EXPECT_EQ(before, after) << "schema evolution must not rewrite segment files";

  ReadView view = lakehouse->read_at();
  int new_field = schema.field_id("energy_joules");
  RowBatch rows = view.scan_all(TableId::observations, {"ds", "p1"}, {6, new_field});
  ASSERT_EQ(rows.row_count(), 4u);
  for (size_t i = 0; i < 4; ++i) EXPECT_TRUE(rows.columns[1][i].is_null());

  // mixed-schema scan: a new segment carrying the evolved field
  {
    AppendTransaction txn = lakehouse->begin_append(TableId::observations);
    RowBatch more;
    more.field_ids = {1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, new_field};
    more.columns.resize(12);
    more.columns[0].push_back(Value::of_text("ds"));
    more.columns[1].push_back(Value::of_text("p1"));
    more.columns[2].push_back(Value::of_text("impl"));
    more.columns[3].push_back(Value::of_text("test"));
    more.columns[4].push_back(Value::of_text("e2"));
    more.columns[5].push_back(Value::of_integer(0));
    more.columns[6].push_back(Value::of_text("op"));
    more.columns[7].push_back(Value::of_text("[]"));
    more.columns[8].push_back(Value::of_text("true"));
    more.columns[9].push_back(Value::of_text("java"));
    more.columns[10].push_back(Value::of_text("env"));
    more.columns[11].push_back(Value::of_decimal(3.5));
    txn.stage_rows(more);
    txn.commit();
  }
  RowBatch mixed = lakehouse->read_at().scan_all(TableId::observations, {"ds", "p1"},
                                                 {5, new_field});
  ASSERT_EQ(mixed.row_count(), 5u);
  size_t nulls = 0, values = 0;
  for (size_t i = 0; i < 5; ++i) {
    if (mixed.columns[1][i].is_null()) {
      ++nulls;
    } else {
      ++values;
      EXPECT_DOUBLE_EQ(mixed.columns[1][i].decimal, 3.5);
    }
  }
  EXPECT_EQ(nulls, 4u);
  EXPECT_EQ(values, 1u);

  try {
    lakehouse->add_column(TableId::observations, "energy_joules", FieldType::decimal);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DuplicateColumn);
  }
}

TEST_F(CatalogTest, ListPartitionsMatchesScansAndFileSizes) {
  auto lakehouse = Lakehouse::open(root_, {.create_if_missing = true});
  AppendTransaction txn = lakehouse->begin_append(TableId::code_implementations);
  RowBatch rows = impl_rows("ds", "p1", 3);
  RowBatch more = impl_rows("ds", "p2", 5);
  for (size_t c = 0; c < rows.columns.size(); ++c) {
    rows.columns[c].insert(rows.columns[c].end(), more.columns[c].begin(), more.columns[c].end());
  }
  txn.stage_rows(rows);
  txn.commit();

  ReadView view = lakehouse->read_at();
  auto stats = view.list_partitions(TableId::code_implementations);
  ASSERT_EQ(stats.size(), 2u);
  for (const auto& stat : stats) {
    EXPECT_EQ(stat.row_count, count_rows(view, TableId::code_implementations, stat.key));
    uint64_t disk = 0;
    fs::path dir = root_ / "code_implementations" / encode_partition_component(stat.key.data_set_id) /
                   encode_partition_component(stat.key.problem_id);
    for (const auto& entry : fs::directory_iterator(dir)) disk += entry.file_size();
    EXPECT_EQ(stat.byte_size, disk);
  }
}

TEST_F(CatalogTest, UrlPartitionKeysGetEncodedDirectories) {
  auto lakehouse = Lakehouse::open(root_, {.create_if_missing = true});
  AppendTransaction txn = lakehouse->begin_append(TableId::code_implementations);
  txn.stage_rows(impl_rows("https://git/my-project/", "com.example.Queue", 1));
  txn.commit();
  PartitionKey key{"https://git/my-project/", "com.example.Queue"};
  EXPECT_EQ(count_rows(lakehouse->read_at(), TableId::code_implementations, key), 1u);
  EXPECT_TRUE(fs::exists(root_ / "code_implementations" / "https%3A%2F%2Fgit%2Fmy-project%2F"));

  EXPECT_EQ(decode_partition_component(encode_partition_component("https://git/x")),
            "https://git/x");
  EXPECT_EQ(encode_partition_component(".."), "%2E%2E");
  EXPECT_THROW(encode_partition_component(""), Error);
}

TEST_F(CatalogTest, ConcurrentWritersNeverLoseCommits) {
  auto lakehouse = Lakehouse::open(root_, {.create_if_missing = true});
  constexpr int kCommitsPerWriter = 30;
  auto writer = [&](int id) {
    for (int i = 0; i < kCommitsPerWriter; ++i) {
      AppendTransaction txn = lakehouse->begin_append(TableId::code_implementations);
      txn.stage_rows(impl_rows("ds", "w" + std::to_string(id), 2, i * 2));
      txn.commit();
    }
  };
  std::thread t1(writer, 1), t2(writer, 2);
  t1.join();
  t2.join();

  EXPECT_EQ(lakehouse->latest_snapshot_id(), 2 * kCommitsPerWriter);
  ReadView view = lakehouse->read_at();
  EXPECT_EQ(count_rows(view, TableId::code_implementations, {"ds", "w1"}),
            uint64_t(2 * kCommitsPerWriter));
  EXPECT_EQ(count_rows(view, TableId::code_implementations, {"ds", "w2"}),
            uint64_t(2 * kCommitsPerWriter));

  // append-only monotonicity across the snapshot sequence
  uint64_t previous = 0;
  for (const auto& summary : lakehouse->snapshots()) {
    uint64_t total = 0;
    for (const auto& [table, count] : summary.row_counts) total += count;
    EXPECT_GE(total, previous);
    previous = total;
  }
}

struct CrashSimulated {};

TEST_F(CatalogTest, FaultInjectionAtEveryCommitStepKeepsCatalogConsistent) {
  const char* points[] = {"append:after_segment_write", "commit:before_tmp",
                          "commit:after_tmp",           "commit:before_publish",
                          "commit:after_publish",       "commit:after_hint"};
  for (const char* point : points) {
    std::string p(point);
    std::replace(p.begin(), p.end(), ':', '_');
    fs::path root = root_ / ("fault_" + p);
    fs::remove_all(root);

    int64_t visible_before;
    uint64_t rows_before;
    {
      auto lakehouse = Lakehouse::open(root, {.create_if_missing = true});
      AppendTransaction txn = lakehouse->begin_append(TableId::code_implementations);
      txn.stage_rows(impl_rows("ds", "p1", 2, 0));
      txn.commit();
      visible_before = lakehouse->latest_snapshot_id();
      rows_before = count_rows(lakehouse->read_at(), TableId::code_implementations, {"ds", "p1"});

      lakehouse->set_fault_injector([&](std::string_view at) {
        if (at == point) throw CrashSimulated{};
      });
      try {
        AppendTransaction txn2 = lakehouse->begin_append(TableId::code_implementations);
        txn2.stage_rows(impl_rows("ds", "p1", 3, 100));
        txn2.commit();
        FAIL() << "fault at " << point << " did not fire";
      } catch (const CrashSimulated&) {
      }
    }

    // reopen: catalog must be readable, and the interrupted commit is either
    // fully visible or fully invisible
    auto reopened = Lakehouse::open(root, {});
    int64_t visible_after = reopened->latest_snapshot_id();
    uint64_t rows_after =
        count_rows(reopened->read_at(), TableId::code_implementations, {"ds", "p1"});
    bool committed = std::string_view(point) == "commit:after_publish" ||
                     std::string_view(point) == "commit:after_hint";
    EXPECT_EQ(visible_after, visible_before + (committed ? 1 : 0)) << point;
    EXPECT_EQ(rows_after, rows_before + (committed ? 3 : 0)) << point;

    // the lakehouse stays writable after the crash
    AppendTransaction txn3 = reopened->begin_append(TableId::code_implementations);
    txn3.stage_rows(impl_rows("ds", "p1", 1, 500));
    txn3.commit();
    EXPECT_EQ(count_rows(reopened->read_at(), TableId::code_implementations, {"ds", "p1"}),
              rows_after + 1) << point;
  }
}

TEST_F(CatalogTest, OrphanSegmentsAreInvisible) {
  auto lakehouse = Lakehouse::open(root_, {.create_if_missing = true});
  lakehouse->set_fault_injector([](std::string_view at) {
    if (at == "commit:before_tmp") throw CrashSimulated{};
  });
  try {
    AppendTransaction txn = lakehouse->begin_append(TableId::code_implementations);
    txn.stage_rows(impl_rows("ds", "p1", 2));
    txn.commit();
    FAIL();
  } catch (const CrashSimulated&) {
  }
  lakehouse->set_fault_injector(nullptr);

  // the staged segment exists on disk but no snapshot references it
  size_t seg_files = 0;
  for (const auto& entry : fs::recursive_directory_iterator(root_)) {
    if (entry.is_regular_file() && entry.path().extension() == ".seg") ++seg_files;
  }
  EXPECT_EQ(seg_files, 1u);
  EXPECT_EQ(lakehouse->latest_snapshot_id(), 0);
  EXPECT_TRUE(lakehouse->read_at().list_partitions(TableId::code_implementations).empty());
}

TEST_F(CatalogTest, PartitionScanOpensOnlyThatPartition) {
  auto lakehouse = Lakehouse::open(root_, {.create_if_missing = true});
  for (int p = 0; p < 3; ++p) {
    AppendTransaction txn = lakehouse->begin_append(TableId::code_implementations);
    txn.stage_rows(impl_rows("ds", "p" + std::to_string(p), 2));
    txn.commit();
  }
  ReadView view = lakehouse->read_at();
  begin_segment_path_capture();
  count_rows(view, TableId::code_implementations, {"ds", "p1"});
  auto opened = end_segment_path_capture();
  ASSERT_EQ(opened.size(), 1u);
  EXPECT_NE(opened[0].string().find("/p1/"), std::string::npos);
}

}  // namespace
}  // namespace obslake
