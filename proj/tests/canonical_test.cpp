#include "obslake/canonical.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <unordered_set>

#include "obslake/error.hpp"

namespace obslake {
namespace {

TEST(Canonicalize, SortsObjectKeys) {
  EXPECT_EQ(canonicalize_json("{\"b\":1, \"a\":2}"), "{\"a\":2,\"b\":1}");
}

TEST(Canonicalize, QueueExampleInput) {
  EXPECT_EQ(canonicalize_json("{\"value\":1}"), "{\"value\":1}");
}

TEST(Canonicalize, NormalizesNumbers) {
  EXPECT_EQ(canonicalize_json("[1.0, -0.0]"), "[1,0]");
  EXPECT_EQ(canonicalize_json("2.5"), "2.5");
  EXPECT_EQ(canonicalize_json("1e2"), "100");
  EXPECT_EQ(canonicalize_json("1e16"), "1e+16");
  EXPECT_EQ(canonicalize_json("-0"), "0");
  EXPECT_EQ(canonicalize_json("9007199254740993"), "9007199254740993");
}

TEST(Canonicalize, StripsWhitespaceAndEscapes) {
  EXPECT_EQ(canonicalize_json(" {\"k\" : [ 1 , \"a\\u0041\" ] } "), "{\"k\":[1,\"aA\"]}");
  EXPECT_EQ(canonicalize_json("\"\\u0001\\n\""), "\"\\u0001\\n\"");
  EXPECT_EQ(canonicalize_json("\"\\/\""), "\"/\"");
}

TEST(Canonicalize, RejectsInvalidJson) {
  EXPECT_THROW(canonicalize_json("{oops"), Error);
  try {
    canonicalize_json("nope!");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ParseError);
  }
}

// Random document generator for property tests.
nlohmann::json random_json(std::mt19937_64& rng, int depth) {
  std::uniform_int_distribution<int> pick(0, depth > 0 ? 6 : 4);
  switch (pick(rng)) {
    case 0:
      return nullptr;
    case 1:
      return rng() % 2 == 0;
    case 2:
      return static_cast<int64_t>(rng());
    case 3: {
      std::uniform_real_distribution<double> d(-1e6, 1e6);
      double v = d(rng);
      if (rng() % 4 == 0) v = std::trunc(v);
      if (rng() % 16 == 0) v = -0.0;
      return v;
    }
    case 4: {
      std::string s;
      size_t len = rng() % 12;
      for (size_t i = 0; i < len; ++i) {
        int c = static_cast<int>(rng() % 130);
        if (c < 0x20) {
          s.push_back(static_cast<char>(c == 0 ? ' ' : c));
        } else if (c < 127) {
          s.push_back(static_cast<char>(c));
        } else {
          s += "\xc3\xa9";  // é
        }
      }
      return s;
    }
    case 5: {
      nlohmann::json arr = nlohmann::json::array();
      size_t len = rng() % 5;
      for (size_t i = 0; i < len; ++i) arr.push_back(random_json(rng, depth - 1));
      return arr;
    }
    default: {
      nlohmann::json obj = nlohmann::json::object();
      size_t len = rng() % 5;
      for (size_t i = 0; i < len; ++i) {
        obj["k" + std::to_string(rng() % 20)] = random_json(rng, depth - 1);
      }
      return obj;
    }
  }
}

TEST(Canonicalize, IdempotentOnGeneratedValues) {
  std::mt19937_64 rng(7);
  for (int i = 0; i < 2000; ++i) {
    nlohmann::json doc = random_json(rng, 4);
    std::string once = canonicalize_json(doc.dump());
    std::string twice = canonicalize_json(once);
    ASSERT_EQ(once, twice) << "input: " << doc.dump();
  }
}

TEST(ContentId, DeterministicAndKindSeparated) {
  std::string payload = "class Q{...}";
  EXPECT_EQ(content_id(ContentKind::implementation, payload),
            content_id(ContentKind::implementation, payload));
  EXPECT_NE(content_id(ContentKind::implementation, payload),
            content_id(ContentKind::test, payload));
  EXPECT_NE(content_id(ContentKind::implementation, payload),
            content_id(ContentKind::implementation, payload + " "));
  EXPECT_TRUE(content_id(ContentKind::implementation, payload).starts_with("impl_"));
  EXPECT_TRUE(content_id(ContentKind::test, payload).starts_with("test_"));
}

TEST(ContentId, EmptyPayloadRejected) {
  try {
    content_id(ContentKind::test, "");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::EmptyPayload);
  }
}

TEST(ContentId, NoCollisionsOnMillionDistinctPayloads) {
  std::unordered_set<std::string> seen;
  seen.reserve(2'000'000);
  for (int i = 0; i < 1'000'000; ++i) {
    ASSERT_TRUE(seen.insert(content_id(ContentKind::implementation, "payload-" + std::to_string(i)))
                    .second)
        << "collision at " << i;
  }
}

TEST(OutputEquivalent, ReflexiveDefault) {
  EXPECT_TRUE(output_equivalent("true", "true"));
  EXPECT_TRUE(output_equivalent("{\"a\":1}", "{\"a\":1}"));
}

TEST(OutputEquivalent, ExceptionModes) {
  std::string a = "{\"$exception\":{\"message\":\"x\",\"type\":\"E\"}}";
  std::string b = "{\"$exception\":{\"message\":\"y\",\"type\":\"E\"}}";
  std::string c = "{\"$exception\":{\"message\":\"y\",\"type\":\"F\"}}";
  EXPECT_FALSE(output_equivalent(a, b));
  EXPECT_TRUE(output_equivalent(a, b, {.exception_mode = ExceptionMode::type_only}));
  EXPECT_FALSE(output_equivalent(a, c, {.exception_mode = ExceptionMode::type_only}));
  EXPECT_TRUE(output_equivalent(a, c, {.exception_mode = ExceptionMode::any_exception}));
  EXPECT_FALSE(output_equivalent(a, "null", {.exception_mode = ExceptionMode::any_exception}));
}

TEST(OutputEquivalent, FloatTolerance) {
  // |1.00005 - 1.0| = 0.00005 <= 0.001, computed directly:
  ASSERT_LE(std::abs(1.00005 - 1.0), 0.001);
  EXPECT_TRUE(output_equivalent("1.00005", "1", {.float_tolerance = 0.001}));
  EXPECT_FALSE(output_equivalent("1.00005", "1", {.float_tolerance = 0.0}));
  EXPECT_TRUE(output_equivalent("[1.0001]", "[1.0002]", {.float_tolerance = 0.001}));
  EXPECT_FALSE(output_equivalent("[1.0001]", "[1.2]", {.float_tolerance = 0.001}));
}

TEST(Canonicalize, ByteEqualityIffStructuralEquality) {
  std::mt19937_64 rng(11);
  for (int i = 0; i < 500; ++i) {
    nlohmann::json doc_a = random_json(rng, 3);
    nlohmann::json doc_b = random_json(rng, 3);
    // Two textual serializations of one document canonicalize identically.
    ASSERT_EQ(canonicalize_json(doc_a.dump()), canonicalize_json(doc_a.dump(4)));
    // Distinct documents agree in canonical bytes iff structurally equal.
    std::string a = canonicalize_json(doc_a.dump());
    std::string b = canonicalize_json(doc_b.dump());
    EXPECT_EQ(a == b, doc_a == doc_b) << a << " vs " << b;
    EXPECT_EQ(output_equivalent(a, b), a == b);
    // symmetry under a tolerant config too
    EquivalenceConfig cfg{.exception_mode = ExceptionMode::type_only, .float_tolerance = 0.5};
    EXPECT_EQ(output_equivalent(a, b, cfg), output_equivalent(b, a, cfg));
  }
}

TEST(OutputEquivalent, GroupingNormalizationMatchesEquivalence) {
  std::vector<std::string> outputs = {
      "{\"$exception\":{\"message\":\"x\",\"type\":\"E\"}}",
      "{\"$exception\":{\"message\":\"y\",\"type\":\"E\"}}",
      "{\"$exception\":{\"message\":\"y\",\"type\":\"F\"}}",
      "[{\"$exception\":{\"message\":\"m\",\"type\":\"E\"}},2]",
      "[{\"$exception\":{\"message\":\"n\",\"type\":\"E\"}},2]",
      "null",
      "3",
  };
  for (ExceptionMode mode :
       {ExceptionMode::exact, ExceptionMode::type_only, ExceptionMode::any_exception}) {
    EquivalenceConfig cfg{.exception_mode = mode, .float_tolerance = 0.0};
    for (const auto& a : outputs) {
      for (const auto& b : outputs) {
        EXPECT_EQ(normalize_for_grouping(a, cfg) == normalize_for_grouping(b, cfg),
                  output_equivalent(a, b, cfg))
            << a << " vs " << b;
      }
    }
  }
}

}  // namespace
}  // namespace obslake
