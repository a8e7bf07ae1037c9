#include "obslake/schema.hpp"

#include <algorithm>

#include "obslake/error.hpp"

namespace obslake {

const char* field_type_name(FieldType type) {
  switch (type) {
    case FieldType::text:
      return "text";
    case FieldType::integer:
      return "integer";
    case FieldType::decimal:
      return "decimal";
    case FieldType::canonical_value:
      return "canonical_value";
    case FieldType::metric_map:
      return "metric_map";
  }
  return "text";
}

FieldType field_type_from_name(std::string_view name) {
  if (name == "text") return FieldType::text;
  if (name == "integer") return FieldType::integer;
  if (name == "decimal") return FieldType::decimal;
  if (name == "canonical_value") return FieldType::canonical_value;
  if (name == "metric_map") return FieldType::metric_map;
  throw Error(ErrorCode::InvalidArgument, "unknown field type: " + std::string(name));
}

ValueKind physical_kind(FieldType type) {
  switch (type) {
    case FieldType::integer:
      return ValueKind::integer;
    case FieldType::decimal:
      return ValueKind::decimal;
    case FieldType::text:
    case FieldType::canonical_value:
    case FieldType::metric_map:
      return ValueKind::text;
  }
  return ValueKind::text;
}

const FieldDef* TableSchema::find_field(int fid) const {
  for (const auto& f : fields) {
    if (f.field_id == fid) return &f;
  }
  return nullptr;
}

const FieldDef* TableSchema::find_field(std::string_view name) const {
  for (const auto& f : fields) {
    if (f.name == name) return &f;
  }
  return nullptr;
}

int TableSchema::field_id(std::string_view name) const {
  const FieldDef* f = find_field(name);
  if (f == nullptr) {
    throw Error(ErrorCode::SchemaMismatch, "no field named " + std::string(name));
  }
  return f->field_id;
}

int TableSchema::max_field_id() const {
  int max_id = 0;
  for (const auto& f : fields) max_id = std::max(max_id, f.field_id);
  return max_id;
}

nlohmann::json TableSchema::to_json() const {
  nlohmann::json fields_doc = nlohmann::json::array();
  for (const auto& f : fields) {
    fields_doc.push_back({{"field_id", f.field_id},
                          {"name", f.name},
                          {"type", field_type_name(f.type)},
                          {"nullable", f.nullable}});
  }
  return {{"schema_id", schema_id}, {"fields", std::move(fields_doc)}};
}

TableSchema TableSchema::from_json(const nlohmann::json& doc) {
  TableSchema schema;
  schema.schema_id = doc.at("schema_id").get<int>();
  for (const auto& f : doc.at("fields")) {
    schema.fields.push_back({f.at("field_id").get<int>(), f.at("name").get<std::string>(),
                             field_type_from_name(f.at("type").get<std::string>()),
                             f.at("nullable").get<bool>()});
  }
  return schema;
}

const char* table_name(TableId table) {
  switch (table) {
    case TableId::observations:
      return "observations";
    case TableId::code_implementations:
      return "code_implementations";
    case TableId::tests:
      return "tests";
  }
  return "observations";
}

TableId table_from_name(std::string_view name) {
  if (name == "observations") return TableId::observations;
  if (name == "code_implementations") return TableId::code_implementations;
  if (name == "tests") return TableId::tests;
  throw Error(ErrorCode::InvalidArgument, "unknown table: " + std::string(name));
}

TableSchema baseline_schema(TableId table) {
  TableSchema schema;
  schema.schema_id = 0;
  switch (table) {
    case TableId::observations:
      schema.fields = {
          {1, "data_set_id", FieldType::text, false},
          {2, "problem_id", FieldType::text, false},
          {3, "implementation_id", FieldType::text, false},
          {4, "test_id", FieldType::text, false},
          {5, "execution_id", FieldType::text, false},
          {6, "step_id", FieldType::integer, false},
          {7, "operation", FieldType::text, false},
          {8, "inputs", FieldType::canonical_value, false},
          {9, "output", FieldType::canonical_value, false},
          {10, "language", FieldType::text, false},
          {11, "environment", FieldType::text, false},
          {12, "git_commit_hash", FieldType::text, true},
          {13, "metrics", FieldType::metric_map, true},
      };
      break;
    case TableId::code_implementations:
      schema.fields = {
          {1, "data_set_id", FieldType::text, false},
          {2, "problem_id", FieldType::text, false},
          {3, "implementation_id", FieldType::text, false},
          {4, "alias", FieldType::text, true},
          {5, "source_code", FieldType::text, false},
          {6, "language", FieldType::text, false},
          {7, "static_metrics", FieldType::metric_map, true},
          {8, "git_commit_hash", FieldType::text, true},
      };
      break;
    case TableId::tests:
      schema.fields = {
          {1, "data_set_id", FieldType::text, false},
          {2, "problem_id", FieldType::text, false},
          {3, "test_id", FieldType::text, false},
          {4, "alias", FieldType::text, true},
          {5, "definition", FieldType::text, false},
          {6, "definition_kind", FieldType::text, false},
          {7, "language", FieldType::text, false},
      };
      break;
  }
  return schema;
}

}  // namespace obslake
