#pragma once

#include <cstdint>
#include <string>
#include <utility>

namespace obslake {

// Physical scalar stored in a segment column. Logical types (see FieldType)
// map onto these: canonical_value and metric_map are carried as text.
enum class ValueKind : uint8_t { null = 0, text = 1, integer = 2, decimal = 3 };

struct Value {
  ValueKind kind = ValueKind::null;
  std::string text;
  int64_t integer = 0;
  double decimal = 0.0;

  Value() = default;

  static Value of_text(std::string s) {
    Value v;
    v.kind = ValueKind::text;
    v.text = std::move(s);
    return v;
  }
  static Value of_integer(int64_t i) {
    Value v;
    v.kind = ValueKind::integer;
    v.integer = i;
    return v;
  }
  static Value of_decimal(double d) {
    Value v;
    v.kind = ValueKind::decimal;
    v.decimal = d;
    return v;
  }

  bool is_null() const { return kind == ValueKind::null; }

  bool operator==(const Value& other) const {
    if (kind != other.kind) return false;
    switch (kind) {
      case ValueKind::null:
        return true;
      case ValueKind::text:
        return text == other.text;
      case ValueKind::integer:
        return integer == other.integer;
      case ValueKind::decimal:
        return decimal == other.decimal;
    }
    return false;
  }

  // Ordering within one kind; null compares less than everything.
  bool less_than(const Value& other) const {
    if (kind != other.kind) return kind < other.kind;
    switch (kind) {
      case ValueKind::null:
        return false;
      case ValueKind::text:
        return text < other.text;
      case ValueKind::integer:
        return integer < other.integer;
      case ValueKind::decimal:
        return decimal < other.decimal;
    }
    return false;
  }
};

}  // namespace obslake
