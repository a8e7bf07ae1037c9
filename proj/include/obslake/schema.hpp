#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "obslake/value.hpp"

namespace obslake {

enum class FieldType { text, integer, decimal, canonical_value, metric_map };

const char* field_type_name(FieldType type);
FieldType field_type_from_name(std::string_view name);

// canonical_value and metric_map are stored as canonical JSON text.
ValueKind physical_kind(FieldType type);

struct FieldDef {
  int field_id = 0;
  std::string name;
  FieldType type = FieldType::text;
  bool nullable = false;
};

// Field ids are stable forever: evolution appends new nullable fields and
// never renumbers or retypes existing ones.
struct TableSchema {
  int schema_id = 0;
  std::vector<FieldDef> fields;

  const FieldDef* find_field(int field_id) const;
  const FieldDef* find_field(std::string_view name) const;
  int field_id(std::string_view name) const;  // throws SchemaMismatch if absent
  int max_field_id() const;

  nlohmann::json to_json() const;
  static TableSchema from_json(const nlohmann::json& doc);
};

enum class TableId { observations, code_implementations, tests };

inline constexpr TableId kAllTables[] = {TableId::observations, TableId::code_implementations,
                                         TableId::tests};

const char* table_name(TableId table);
TableId table_from_name(std::string_view name);

TableSchema baseline_schema(TableId table);

}  // namespace obslake
