#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mlehr/core/types.hpp"

namespace mlehr::core {

// Admissions table: one row per ICU stay carrying demographics and outcome
// timestamps.
struct StaysTableSpec {
    std::filesystem::path file_path;
    std::string patient_column;
    std::string stay_column;
    std::string admit_column;
    std::string discharge_column;
    std::string death_column;
    std::string age_column;
    std::string weight_column;    // optional ("" = absent)
    std::string dialysis_column;  // optional
};

struct EventTableSpec {
    std::string name;
    std::filesystem::path file_path;
    std::string event_type;
    std::string timestamp_column;
    std::string patient_column;
    std::string stay_column;
    std::vector<std::string> excluded_columns;
    // Feature columns in serialization order. Empty means header order.
    std::vector<std::string> columns;
};

// Where a named variable lives in the raw tables: values of `column` in
// `table`, optionally restricted to rows whose `match_column` equals
// `match_value`, multiplied by `unit_scale` to reach canonical units.
struct VariableSource {
    std::string table;
    std::string column;
    double unit_scale = 1.0;
    std::string match_column;
    std::string match_value;
};

struct SiteManifest {
    std::string site_id;
    Language language = Language::en;
    std::filesystem::path base_dir;
    StaysTableSpec stays;
    std::vector<EventTableSpec> tables;
    std::map<std::string, VariableSource> analyte_map;
    std::map<std::string, VariableSource> common_variable_map;

    const EventTableSpec* table(const std::string& name) const;
    std::filesystem::path resolve(const std::filesystem::path& p) const;
};

// Parses and validates a manifest. Relative file paths resolve against the
// manifest's directory. Errors: UnknownLanguage, MissingColumn(<table>),
// DuplicateTable(<table>), UnknownKey(<key>), MissingFile(<path>),
// InvalidManifest(<detail>).
SiteManifest parse_manifest(const std::filesystem::path& path);
SiteManifest parse_manifest_text(const std::string& json_text, const std::filesystem::path& base_dir,
                                 bool check_files = true);

std::string manifest_to_json(const SiteManifest& m);

}  // namespace mlehr::core
