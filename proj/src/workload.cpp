#include "obslake/workload.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "obslake/canonical.hpp"
#include "obslake/error.hpp"
#include "obslake/parallel.hpp"

namespace obslake {

namespace {

uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

uint64_t mix(uint64_t a, uint64_t b) { return splitmix64(a ^ splitmix64(b)); }

double unit_interval(uint64_t h) { return (h >> 11) * 0x1.0p-53; }

// integer draw with mean `mean`: floor(mean) + Bernoulli(frac(mean))
int draw_count(double mean, uint64_t h) {
  int base = static_cast<int>(std::floor(mean));
  double frac = mean - base;
  return base + (unit_interval(h) < frac ? 1 : 0);
}

// Largest-remainder apportionment with weights 4^(k-1-i): 26 impls and 3
// classes yield sizes 20/5/1.
std::vector<int> apportion_classes(int n, int k) {
  k = std::max(1, std::min(k, n));
  std::vector<double> weights(k);
  double total = 0;
  for (int i = 0; i < k; ++i) {
    weights[i] = std::pow(4.0, k - 1 - i);
    total += weights[i];
  }
  std::vector<int> sizes(k);
  std::vector<std::pair<double, int>> remainders(k);
  int assigned = 0;
  for (int i = 0; i < k; ++i) {
    double quota = n * weights[i] / total;
    sizes[i] = static_cast<int>(std::floor(quota));
    remainders[i] = {quota - sizes[i], i};
    assigned += sizes[i];
  }
  std::sort(remainders.begin(), remainders.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  for (int r = 0; r < n - assigned; ++r) sizes[remainders[r % k].second] += 1;
  // Guarantee every class is non-empty.
  for (int i = 0; i < k; ++i) {
    if (sizes[i] == 0) {
      auto max_it = std::max_element(sizes.begin(), sizes.end());
      if (*max_it <= 1) break;
      *max_it -= 1;
      sizes[i] += 1;
    }
  }
  std::sort(sizes.begin(), sizes.end(), std::greater<int>());
  return sizes;
}

const char* kOps[] = {"enqueue", "dequeue", "peek", "size"};

struct StepShape {
  const char* operation;
  int arg;  // payload for enqueue, -1 otherwise
};

// Stimulus is a pure function of (seed, problem, test, step); every
// implementation of the problem sees identical stimuli.
StepShape step_shape(uint64_t seed, int problem, int test, int step) {
  if (step == 0) return {"create", -1};
  if (step == 1) return {"size", -1};  // canonical divergence probe
  uint64_t h = mix(seed, mix(0x5717, mix(problem, mix(test, step))));
  const char* op = kOps[h % 4];
  int arg = op == kOps[0] ? static_cast<int>((h >> 8) % 1000) : -1;
  return {op, arg};
}

// Response depends on the implementation's behavior class; classes diverge at
// step 1 of every test and on a sparse pseudo-random subset of later steps.
void append_output(std::string& out, uint64_t seed, int problem, int test, int step, int cls,
                   const StepShape& shape) {
  uint64_t h = mix(seed, mix(0xbeef, mix(problem, mix(test, step))));
  bool divergent = cls > 0 && (step == 1 || mix(h, cls) % 29 == 0);
  uint64_t shifted = h + (divergent ? static_cast<uint64_t>(cls) * 7919 : 0);
  if (std::string_view(shape.operation) == "create") {
    out += "null";
  } else if (std::string_view(shape.operation) == "enqueue") {
    out += "true";
  } else if (std::string_view(shape.operation) == "size") {
    char buf[24];
    std::snprintf(buf, sizeof(buf), "%d", static_cast<int>(shifted % 100));
    out += buf;
  } else if (h % 13 == 0) {  // dequeue/peek on an empty queue
    out += "{\"$exception\":{\"message\":\"queue empty at step ";
    out += std::to_string(step);
    out += "\",\"type\":\"NoSuchElementException\"}}";
  } else {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "{\"value\":%d}", static_cast<int>(shifted % 1000));
    out += buf;
  }
}

std::string impl_source(uint64_t seed, int problem, int impl, int cls) {
  uint64_t h = mix(seed, mix(0xc0de, mix(problem, impl)));
  int filler = 4 + static_cast<int>(h % 12);
  std::string src;
  src += "package bench.problem_" + std::to_string(problem) + ";\n\n";
  src += "// variant " + std::to_string(impl) + ", behavior family " + std::to_string(cls) + "\n";
  src += "public class Solution {\n";
  src += "    private final java.util.ArrayDeque<Integer> state = new java.util.ArrayDeque<>();\n";
  src += "    public void create() { state.clear(); }\n";
  src += "    public boolean enqueue(int value) {\n";
  for (int i = 0; i < filler; ++i) {
    src += "        int scratch" + std::to_string(i) + " = " +
           std::to_string(static_cast<int>(mix(h, i) % 100000)) + ";\n";
  }
  src += "        state.addLast(value);\n        return true;\n    }\n";
  src += "    public Integer dequeue() { return state.pollFirst(); }\n";
  src += "    public Integer peek() { return state.peekFirst(); }\n";
  src += "    public int size() { return state.size(); }\n";
  src += "}\n";
  return src;
}

std::string test_definition(uint64_t seed, int problem, int test, int steps) {
  std::string def = "sheet test_" + std::to_string(test) + " {\n";
  for (int s = 0; s < steps; ++s) {
    StepShape shape = step_shape(seed, problem, test, s);
    def += "  " + std::to_string(s) + ": " + shape.operation;
    def += shape.arg >= 0 ? "(" + std::to_string(shape.arg) + ")" : "()";
    def += " -> ?\n";
  }
  def += "}\n";
  return def;
}

int count_lines(const std::string& src) {
  return static_cast<int>(std::count(src.begin(), src.end(), '\n'));
}

}  // namespace

std::string workload_problem_id(int problem_index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "problem_%04d", problem_index);
  return buf;
}

std::string workload_impl_alias(int problem_index, int impl_index) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "impl_p%d_v%03d", problem_index, impl_index);
  return buf;
}

std::string workload_test_alias(int problem_index, int test_index) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "test_p%d_t%02d", problem_index, test_index);
  return buf;
}

nlohmann::json WorkloadPlan::to_json() const {
  nlohmann::json problems_doc = nlohmann::json::array();
  for (const auto& p : problems) {
    problems_doc.push_back({{"problem_id", p.problem_id},
                            {"implementations", p.implementations},
                            {"tests", p.tests},
                            {"class_sizes", p.class_sizes},
                            {"class_of_impl", p.class_of_impl},
                            {"steps_per_test", p.steps_per_test}});
  }
  return {{"data_set_id", data_set_id},
          {"seed", seed},
          {"density",
           {{"implementations_per_problem", density.implementations_per_problem},
            {"sequences_per_problem", density.sequences_per_problem},
            {"steps_per_sequence", density.steps_per_sequence},
            {"equivalence_classes", density.equivalence_classes}}},
          {"problems", std::move(problems_doc)}};
}

WorkloadPlan plan_workload(int problems, uint64_t seed, const WorkloadDensity& density,
                           const std::string& data_set_id) {
  if (problems < 1) throw Error(ErrorCode::InvalidDensity, "problems must be >= 1");
  if (density.implementations_per_problem < 1 || density.sequences_per_problem < 1 ||
      density.steps_per_sequence < 1 || density.equivalence_classes < 1) {
    throw Error(ErrorCode::InvalidDensity, "density values must be >= 1");
  }

  WorkloadPlan plan;
  plan.data_set_id = data_set_id;
  plan.seed = seed;
  plan.density = density;
  plan.problems.resize(problems);

  double tests_mean = density.sequences_per_problem / density.implementations_per_problem;
  for (int p = 0; p < problems; ++p) {
    ProblemPlan& prob = plan.problems[p];
    prob.problem_id = workload_problem_id(p);
    prob.implementations = draw_count(density.implementations_per_problem, mix(seed, mix(1, p)));
    prob.tests = std::max(1, draw_count(tests_mean, mix(seed, mix(2, p))));
    prob.class_sizes = apportion_classes(prob.implementations, density.equivalence_classes);
    prob.class_of_impl.reserve(prob.implementations);
    for (size_t cls = 0; cls < prob.class_sizes.size(); ++cls) {
      for (int i = 0; i < prob.class_sizes[cls]; ++i) {
        prob.class_of_impl.push_back(static_cast<int>(cls));
      }
    }
    prob.steps_per_test.reserve(prob.tests);
    for (int t = 0; t < prob.tests; ++t) {
      prob.steps_per_test.push_back(
          std::max(2, draw_count(density.steps_per_sequence, mix(seed, mix(3, mix(p, t))))));
    }
  }
  return plan;
}

WorkloadCounts expected_counts(const WorkloadPlan& plan) {
  WorkloadCounts counts;
  for (const auto& p : plan.problems) {
    counts.implementations += p.implementations;
    counts.tests += p.tests;
    counts.sequences += static_cast<uint64_t>(p.tests) * p.implementations;
    uint64_t steps = std::accumulate(p.steps_per_test.begin(), p.steps_per_test.end(), 0ull);
    counts.observation_rows += steps * p.implementations;
  }
  return counts;
}

WorkloadCounts generate_workload(const WorkloadPlan& plan, std::ostream* implementations,
                                 std::ostream* tests, std::ostream* observations) {
  size_t n = plan.problems.size();
  // Problems are generated in bounded blocks to cap memory; per-problem
  // chunks concatenate in problem order so serial and parallel modes produce
  // identical bytes.
  constexpr size_t kBlock = 16;
  std::vector<std::string> impl_chunks(implementations ? kBlock : 0);
  std::vector<std::string> test_chunks(tests ? kBlock : 0);
  std::vector<std::string> obs_chunks(observations ? kBlock : 0);

  for (size_t block_start = 0; block_start < n; block_start += kBlock) {
  size_t block_len = std::min(kBlock, n - block_start);
  parallel_for(block_len, [&](size_t bi) {
    size_t pi = block_start + bi;
    const ProblemPlan& prob = plan.problems[pi];
    int p = static_cast<int>(pi);
    uint64_t seed = plan.seed;

    if (implementations) {
      std::string& out = impl_chunks[bi];
      for (int v = 0; v < prob.implementations; ++v) {
        std::string src = impl_source(seed, p, v, prob.class_of_impl[v]);
        out += "{\"data_set_id\":";
        append_json_string(out, plan.data_set_id);
        out += ",\"problem_id\":";
        append_json_string(out, prob.problem_id);
        out += ",\"id\":";
        append_json_string(out, workload_impl_alias(p, v));
        out += ",\"source_code\":";
        append_json_string(out, src);
        out += ",\"language\":\"java\",\"static_metrics\":{\"loc\":";
        out += std::to_string(count_lines(src));
        out += "}}\n";
      }
    }

    if (tests) {
      std::string& out = test_chunks[bi];
      for (int t = 0; t < prob.tests; ++t) {
        out += "{\"data_set_id\":";
        append_json_string(out, plan.data_set_id);
        out += ",\"problem_id\":";
        append_json_string(out, prob.problem_id);
        out += ",\"id\":";
        append_json_string(out, workload_test_alias(p, t));
        out += ",\"definition\":";
        append_json_string(out, test_definition(seed, p, t, prob.steps_per_test[t]));
        out += ",\"definition_kind\":\"sequence_sheet\",\"language\":\"java\"}\n";
      }
    }

    if (observations) {
      std::string& out = obs_chunks[bi];
      out.reserve(256 * 1024);
      std::string prefix = "{\"data_set_id\":";
      append_json_string(prefix, plan.data_set_id);
      prefix += ",\"problem_id\":";
      append_json_string(prefix, prob.problem_id);
      for (int t = 0; t < prob.tests; ++t) {
        std::string test_alias = workload_test_alias(p, t);
        for (int v = 0; v < prob.implementations; ++v) {
          int cls = prob.class_of_impl[v];
          std::string impl_alias = workload_impl_alias(p, v);
          std::string exec_id = "exec_p" + std::to_string(p) + "_t" + std::to_string(t) + "_v" +
                                std::to_string(v) + "_r0";
          double coverage =
              std::round(unit_interval(mix(seed, mix(0xfeed, mix(p, mix(t, v))))) * 1000.0) /
              1000.0;
          char coverage_buf[32];
          std::snprintf(coverage_buf, sizeof(coverage_buf), "%.3f", coverage);
          for (int s = 0; s < prob.steps_per_test[t]; ++s) {
            StepShape shape = step_shape(seed, p, t, s);
            out += prefix;
            out += ",\"implementation_id\":";
            append_json_string(out, impl_alias);
            out += ",\"test_id\":";
            append_json_string(out, test_alias);
            out += ",\"execution_id\":";
            append_json_string(out, exec_id);
            out += ",\"step_id\":";
            out += std::to_string(s);
            out += ",\"operation\":\"";
            out += shape.operation;
            out += "\",\"inputs\":";
            if (shape.arg >= 0) {
              out += "[{\"value\":" + std::to_string(shape.arg) + "}]";
            } else {
              out += "[]";
            }
            out += ",\"output\":";
            append_output(out, seed, p, t, s, cls, shape);
            out += ",\"language\":\"java\",\"environment\":\"jdk17-linux-x86_64\"";
            out += ",\"metrics\":{\"branch_coverage\":";
            out += coverage_buf;
            out += "}}\n";
          }
          out += "{\"$end_execution\":";
          append_json_string(out, exec_id);
          out += "}\n";
        }
      }
    }
  });

  auto drain = [block_len](std::vector<std::string>& chunks, std::ostream* sink) {
    if (sink == nullptr) return;
    for (size_t i = 0; i < block_len; ++i) {
      sink->write(chunks[i].data(), static_cast<std::streamsize>(chunks[i].size()));
      chunks[i].clear();
    }
  };
  drain(impl_chunks, implementations);
  drain(test_chunks, tests);
  drain(obs_chunks, observations);
  }

  if (implementations) implementations->flush();
  if (tests) tests->flush();
  if (observations) observations->flush();
  return expected_counts(plan);
}

WorkloadCounts generate_workload_files(const WorkloadPlan& plan,
                                       const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::IoFailure, "cannot create " + dir.string());
  std::ofstream impls(dir / "implementations.jsonl", std::ios::binary);
  std::ofstream tests(dir / "tests.jsonl", std::ios::binary);
  std::ofstream obs(dir / "observations.jsonl", std::ios::binary);
  if (!impls || !tests || !obs) {
    throw Error(ErrorCode::IoFailure, "cannot open workload files in " + dir.string());
  }
  WorkloadCounts counts = generate_workload(plan, &impls, &tests, &obs);
  std::ofstream plan_file(dir / "plan.json", std::ios::binary);
  plan_file << plan.to_json().dump(2) << "\n";
  if (!impls.good() || !tests.good() || !obs.good() || !plan_file.good()) {
    throw Error(ErrorCode::IoFailure, "short write while generating workload");
  }
  return counts;
}

}  // namespace obslake
