#pragma once

#include <string>
#include <string_view>

#include "json.hpp"

namespace obslake {

// Canonical JSON text: object keys sorted by code point, no insignificant
// whitespace, integral numbers rendered without a decimal point, -0
// normalized to 0, minimal string escapes. Canonicalization is idempotent,
// so byte equality of canonical text is structural equality.
//
// Exceptions observed during execution travel as an envelope object:
//   {"$exception":{"type":"...","message":"..."}}
// Non-finite floats are encoded by producers as {"$float":"NaN"} etc.;
// to the canonicalizer these are ordinary objects.

std::string canonicalize_json(std::string_view raw);

// Serializes an already-parsed document in canonical form.
void canonical_write(const nlohmann::json& value, std::string& out);
std::string canonical_dump(const nlohmann::json& value);

// Appends s as a quoted JSON string with canonical escaping.
void append_json_string(std::string& out, std::string_view s);

enum class ExceptionMode { exact, type_only, any_exception };

ExceptionMode exception_mode_from_name(std::string_view name);
const char* exception_mode_name(ExceptionMode mode);

struct EquivalenceConfig {
  ExceptionMode exception_mode = ExceptionMode::exact;
  double float_tolerance = 0.0;  // absolute tolerance on numeric leaves
};

// True iff the exception envelope shape: {"$exception":{"type":..,"message":..}}.
bool is_exception_envelope(const nlohmann::json& value);

// Structural equivalence of two canonical values under cfg. Symmetric and
// reflexive; transitive when float_tolerance == 0, in which case it equals
// byte equality of the normalized canonical texts.
bool output_equivalent(std::string_view a, std::string_view b,
                       const EquivalenceConfig& cfg = {});

// Rewrites exception envelopes according to cfg.exception_mode so that
// grouping by normalized bytes matches output_equivalent at tolerance 0.
// float_tolerance is deliberately not applied (tolerant equivalence is not
// transitive and cannot be expressed by normalization).
std::string normalize_for_grouping(std::string_view canonical,
                                   const EquivalenceConfig& cfg);

enum class ContentKind { implementation, test };

// Content-derived identifier: "impl_"/"test_" + 32 hex chars of a SHA-256
// digest over (kind, payload). Identical payloads always map to the same id;
// the kind participates in the digest.
std::string content_id(ContentKind kind, std::string_view payload);

// Streaming SHA-256 (also behind content_id and behavioral fingerprints).
class Sha256 {
 public:
  Sha256();
  ~Sha256();
  Sha256(const Sha256&) = delete;
  Sha256& operator=(const Sha256&) = delete;

  void update(std::string_view bytes);
  void update(const void* data, size_t size);
  std::string hex_digest(size_t bytes = 32);  // finalizes; at most 32 bytes

 private:
  void* ctx_;
};

}  // namespace obslake
