#include "obslake/canonical.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstring>

#include "obslake/error.hpp"

namespace obslake {

namespace {

void write_escaped_string(std::string_view s, std::string& out) {
  out.push_back('"');
  for (unsigned char c : s) {
    switch (c) {
      case '"':
        out += "\\\"";
        break;
      case '\\':
        out += "\\\\";
        break;
      case '\b':
        out += "\\b";
        break;
      case '\t':
        out += "\\t";
        break;
      case '\n':
        out += "\\n";
        break;
      case '\f':
        out += "\\f";
        break;
      case '\r':
        out += "\\r";
        break;
      default:
        if (c < 0x20) {
          char buf[8];
          std::snprintf(buf, sizeof(buf), "\\u%04x", c);
          out += buf;
        } else {
          out.push_back(static_cast<char>(c));
        }
    }
  }
  out.push_back('"');
}

void write_double(double d, std::string& out) {
  if (d == 0.0) {  // covers -0
    out.push_back('0');
    return;
  }
  // Integral doubles inside the exactly-representable range print as integers.
  if (std::isfinite(d) && std::trunc(d) == d && std::abs(d) < 9007199254740992.0) {
    char buf[32];
    auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), static_cast<int64_t>(d));
    (void)ec;
    out.append(buf, p);
    return;
  }
  // Shortest round-trip form.
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), d);
  (void)ec;
  out.append(buf, p);
}

}  // namespace

void canonical_write(const nlohmann::json& value, std::string& out) {
  using nlohmann::json;
  switch (value.type()) {
    case json::value_t::null:
      out += "null";
      break;
    case json::value_t::boolean:
      out += value.get<bool>() ? "true" : "false";
      break;
    case json::value_t::number_integer: {
      char buf[32];
      auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), value.get<int64_t>());
      (void)ec;
      out.append(buf, p);
      break;
    }
    case json::value_t::number_unsigned: {
      char buf[32];
      auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), value.get<uint64_t>());
      (void)ec;
      out.append(buf, p);
      break;
    }
    case json::value_t::number_float:
      write_double(value.get<double>(), out);
      break;
    case json::value_t::string:
      write_escaped_string(value.get_ref<const std::string&>(), out);
      break;
    case json::value_t::array: {
      out.push_back('[');
      bool first = true;
      for (const auto& item : value) {
        if (!first) out.push_back(',');
        first = false;
        canonical_write(item, out);
      }
      out.push_back(']');
      break;
    }
    case json::value_t::object: {
      // nlohmann keeps object keys in std::map order == code point order.
      out.push_back('{');
      bool first = true;
      for (auto it = value.begin(); it != value.end(); ++it) {
        if (!first) out.push_back(',');
        first = false;
        write_escaped_string(it.key(), out);
        out.push_back(':');
        canonical_write(it.value(), out);
      }
      out.push_back('}');
      break;
    }
    default:
      throw Error(ErrorCode::ParseError, "unsupported JSON value type");
  }
}

std::string canonical_dump(const nlohmann::json& value) {
  std::string out;
  canonical_write(value, out);
  return out;
}

void append_json_string(std::string& out, std::string_view s) { write_escaped_string(s, out); }

std::string canonicalize_json(std::string_view raw) {
  nlohmann::json parsed = nlohmann::json::parse(raw, nullptr, false);
  if (parsed.is_discarded()) {
    throw Error(ErrorCode::ParseError, "invalid JSON: " + std::string(raw.substr(0, 120)));
  }
  return canonical_dump(parsed);
}

ExceptionMode exception_mode_from_name(std::string_view name) {
  if (name == "exact") return ExceptionMode::exact;
  if (name == "type_only") return ExceptionMode::type_only;
  if (name == "any_exception") return ExceptionMode::any_exception;
  throw Error(ErrorCode::InvalidArgument, "unknown exception mode: " + std::string(name));
}

const char* exception_mode_name(ExceptionMode mode) {
  switch (mode) {
    case ExceptionMode::exact:
      return "exact";
    case ExceptionMode::type_only:
      return "type_only";
    case ExceptionMode::any_exception:
      return "any_exception";
  }
  return "exact";
}

bool is_exception_envelope(const nlohmann::json& value) {
  if (!value.is_object() || value.size() != 1) return false;
  auto it = value.find("$exception");
  if (it == value.end() || !it->is_object()) return false;
  const auto& body = *it;
  return body.contains("type") && body["type"].is_string() && body.contains("message") &&
         body["message"].is_string();
}

namespace {

double as_double(const nlohmann::json& v) {
  if (v.is_number_integer()) return static_cast<double>(v.get<int64_t>());
  if (v.is_number_unsigned()) return static_cast<double>(v.get<uint64_t>());
  return v.get<double>();
}

bool numbers_equivalent(const nlohmann::json& a, const nlohmann::json& b, double tolerance) {
  if (tolerance == 0.0) {
    // Exact comparison; integers compared as integers to dodge precision loss.
    bool a_int = a.is_number_integer() || a.is_number_unsigned();
    bool b_int = b.is_number_integer() || b.is_number_unsigned();
    if (a_int && b_int) {
      if (a.is_number_unsigned() != b.is_number_unsigned()) {
        if (a.is_number_integer() && a.get<int64_t>() < 0) return false;
        if (b.is_number_integer() && b.get<int64_t>() < 0) return false;
        return a.get<uint64_t>() == b.get<uint64_t>();
      }
      return a.is_number_unsigned() ? a.get<uint64_t>() == b.get<uint64_t>()
                                    : a.get<int64_t>() == b.get<int64_t>();
    }
    return as_double(a) == as_double(b);
  }
  return std::abs(as_double(a) - as_double(b)) <= tolerance;
}

bool values_equivalent(const nlohmann::json& a, const nlohmann::json& b,
                       const EquivalenceConfig& cfg) {
  if (is_exception_envelope(a) && is_exception_envelope(b)) {
    const auto& ea = a["$exception"];
    const auto& eb = b["$exception"];
    switch (cfg.exception_mode) {
      case ExceptionMode::any_exception:
        return true;
      case ExceptionMode::type_only:
        return ea["type"] == eb["type"];
      case ExceptionMode::exact:
        return ea["type"] == eb["type"] && ea["message"] == eb["message"];
    }
  }
  if (a.is_number() && b.is_number()) {
    return numbers_equivalent(a, b, cfg.float_tolerance);
  }
  if (a.type() != b.type()) {
    // number_integer vs number_float handled above; anything else must match.
    return false;
  }
  if (a.is_array()) {
    if (a.size() != b.size()) return false;
    for (size_t i = 0; i < a.size(); ++i) {
      if (!values_equivalent(a[i], b[i], cfg)) return false;
    }
    return true;
  }
  if (a.is_object()) {
    if (a.size() != b.size()) return false;
    auto it_a = a.begin();
    auto it_b = b.begin();
    for (; it_a != a.end(); ++it_a, ++it_b) {
      if (it_a.key() != it_b.key()) return false;
      if (!values_equivalent(it_a.value(), it_b.value(), cfg)) return false;
    }
    return true;
  }
  return a == b;
}

void normalize_node(nlohmann::json& value, ExceptionMode mode) {
  if (is_exception_envelope(value)) {
    auto& body = value["$exception"];
    switch (mode) {
      case ExceptionMode::exact:
        break;
      case ExceptionMode::type_only:
        body["message"] = "";
        break;
      case ExceptionMode::any_exception:
        body["message"] = "";
        body["type"] = "";
        break;
    }
    return;
  }
  if (value.is_array() || value.is_object()) {
    for (auto& item : value) normalize_node(item, mode);
  }
}

}  // namespace

bool output_equivalent(std::string_view a, std::string_view b, const EquivalenceConfig& cfg) {
  if (cfg.exception_mode == ExceptionMode::exact && cfg.float_tolerance == 0.0) {
    return a == b;  // canonical text is unique per structural value
  }
  nlohmann::json ja = nlohmann::json::parse(a, nullptr, false);
  nlohmann::json jb = nlohmann::json::parse(b, nullptr, false);
  if (ja.is_discarded() || jb.is_discarded()) {
    throw Error(ErrorCode::ParseError, "output_equivalent expects canonical JSON inputs");
  }
  return values_equivalent(ja, jb, cfg);
}

std::string normalize_for_grouping(std::string_view canonical, const EquivalenceConfig& cfg) {
  if (cfg.exception_mode == ExceptionMode::exact) return std::string(canonical);
  nlohmann::json value = nlohmann::json::parse(canonical, nullptr, false);
  if (value.is_discarded()) {
    throw Error(ErrorCode::ParseError, "normalize_for_grouping expects canonical JSON input");
  }
  normalize_node(value, cfg.exception_mode);
  return canonical_dump(value);
}

Sha256::Sha256() : ctx_(EVP_MD_CTX_new()) {
  EVP_DigestInit_ex(static_cast<EVP_MD_CTX*>(ctx_), EVP_sha256(), nullptr);
}

Sha256::~Sha256() { EVP_MD_CTX_free(static_cast<EVP_MD_CTX*>(ctx_)); }

void Sha256::update(std::string_view bytes) { update(bytes.data(), bytes.size()); }

void Sha256::update(const void* data, size_t size) {
  EVP_DigestUpdate(static_cast<EVP_MD_CTX*>(ctx_), data, size);
}

std::string Sha256::hex_digest(size_t bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(static_cast<EVP_MD_CTX*>(ctx_), digest, &len);
  static const char* hex = "0123456789abcdef";
  std::string out;
  size_t take = std::min<size_t>(bytes, len);
  out.reserve(take * 2);
  for (size_t i = 0; i < take; ++i) {
    out.push_back(hex[digest[i] >> 4]);
    out.push_back(hex[digest[i] & 0xf]);
  }
  return out;
}

std::string content_id(ContentKind kind, std::string_view payload) {
  if (payload.empty()) {
    throw Error(ErrorCode::EmptyPayload, "content_id payload must be non-empty");
  }
  const char* tag = kind == ContentKind::implementation ? "implementation" : "test";
  Sha256 hasher;
  hasher.update(tag, std::strlen(tag) + 1);  // include NUL as separator
  hasher.update(payload);
  // 128 bits is plenty for dedup identity
  return (kind == ContentKind::implementation ? "impl_" : "test_") + hasher.hex_digest(16);
}

const char* error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::ParseError:
      return "ParseError";
    case ErrorCode::EmptyPayload:
      return "EmptyPayload";
    case ErrorCode::SchemaMismatch:
      return "SchemaMismatch";
    case ErrorCode::IoFailure:
      return "IoFailure";
    case ErrorCode::SegmentExists:
      return "SegmentExists";
    case ErrorCode::ChecksumMismatch:
      return "ChecksumMismatch";
    case ErrorCode::CorruptEncoding:
      return "CorruptEncoding";
    case ErrorCode::NotALakehouse:
      return "NotALakehouse";
    case ErrorCode::VersionTooNew:
      return "VersionTooNew";
    case ErrorCode::CommitContention:
      return "CommitContention";
    case ErrorCode::EmptyTransaction:
      return "EmptyTransaction";
    case ErrorCode::UnknownSnapshot:
      return "UnknownSnapshot";
    case ErrorCode::DuplicateColumn:
      return "DuplicateColumn";
    case ErrorCode::InvalidPartitionKey:
      return "InvalidPartitionKey";
    case ErrorCode::MalformedStream:
      return "MalformedStream";
    case ErrorCode::ReferentialGap:
      return "ReferentialGap";
    case ErrorCode::UnknownImplementation:
      return "UnknownImplementation";
    case ErrorCode::UnknownCommit:
      return "UnknownCommit";
    case ErrorCode::EmptyCommonTestSet:
      return "EmptyCommonTestSet";
    case ErrorCode::InvalidDensity:
      return "InvalidDensity";
    case ErrorCode::InvalidArgument:
      return "InvalidArgument";
  }
  return "Error";
}

}  // namespace obslake
