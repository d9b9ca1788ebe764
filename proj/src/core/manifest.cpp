#include "mlehr/core/manifest.hpp"

#include <set>

#include "json.hpp"
#include "mlehr/error.hpp"
#include "mlehr/util/csv.hpp"
#include "mlehr/util/fs.hpp"

namespace mlehr::core {

using nlohmann::json;

namespace {

void reject_unknown(const json& obj, const std::set<std::string>& allowed, const std::string& where) {
    for (auto it = obj.begin(); it != obj.end(); ++it) {
        if (!allowed.count(it.key())) fail("UnknownKey", where + "." + it.key());
    }
}

std::string req_str(const json& obj, const char* key, const std::string& owner) {
    auto it = obj.find(key);
    if (it == obj.end() || !it->is_string() || it->get<std::string>().empty()) fail("MissingColumn", owner);
    return it->get<std::string>();
}

std::string opt_str(const json& obj, const char* key) {
    auto it = obj.find(key);
    if (it == obj.end() || it->is_null()) return {};
    if (!it->is_string()) fail("InvalidManifest", std::string(key) + " must be a string");
    return it->get<std::string>();
}

std::vector<std::string> opt_list(const json& obj, const char* key, const std::string& owner) {
    std::vector<std::string> out;
    auto it = obj.find(key);
    if (it == obj.end()) return out;
    if (!it->is_array()) fail("InvalidManifest", owner + "." + key + " must be a list");
    for (const auto& v : *it) {
        if (!v.is_string()) fail("InvalidManifest", owner + "." + key + " entries must be strings");
        out.push_back(v.get<std::string>());
    }
    return out;
}

std::map<std::string, VariableSource> parse_var_map(const json& obj, const char* key) {
    std::map<std::string, VariableSource> out;
    auto it = obj.find(key);
    if (it == obj.end()) return out;
    if (!it->is_object()) fail("InvalidManifest", std::string(key) + " must be an object");
    for (auto v = it->begin(); v != it->end(); ++v) {
        const std::string owner = std::string(key) + "." + v.key();
        reject_unknown(v.value(), {"table", "column", "unit_scale", "match_column", "match_value"}, owner);
        VariableSource src;
        src.table = req_str(v.value(), "table", owner);
        src.column = req_str(v.value(), "column", owner);
        if (auto s = v.value().find("unit_scale"); s != v.value().end()) {
            if (!s->is_number()) fail("InvalidManifest", owner + ".unit_scale must be a number");
            src.unit_scale = s->get<double>();
        }
        if (!(src.unit_scale > 0.0)) fail("InvalidManifest", owner + ".unit_scale must be > 0");
        src.match_column = opt_str(v.value(), "match_column");
        src.match_value = opt_str(v.value(), "match_value");
        if (src.match_column.empty() != src.match_value.empty())
            fail("InvalidManifest", owner + " needs both match_column and match_value");
        out.emplace(v.key(), std::move(src));
    }
    return out;
}

void require_columns(const std::vector<std::string>& header, const std::vector<std::string>& needed,
                     const std::string& owner) {
    for (const auto& col : needed) {
        if (col.empty()) continue;
        bool found = false;
        for (const auto& h : header) found = found || h == col;
        if (!found) fail("MissingColumn", owner);
    }
}

}  // namespace

const EventTableSpec* SiteManifest::table(const std::string& name) const {
    for (const auto& t : tables) {
        if (t.name == name) return &t;
    }
    return nullptr;
}

std::filesystem::path SiteManifest::resolve(const std::filesystem::path& p) const {
    if (p.is_absolute() || base_dir.empty()) return p;
    return base_dir / p;
}

SiteManifest parse_manifest_text(const std::string& json_text, const std::filesystem::path& base_dir,
                                 bool check_files) {
    json root;
    try {
        root = json::parse(json_text);
    } catch (const json::parse_error& e) {
        fail("InvalidManifest", e.what());
    }
    if (!root.is_object()) fail("InvalidManifest", "top level must be an object");
    reject_unknown(root, {"site_id", "language", "stays", "tables", "analyte_map", "common_variable_map"},
                   "manifest");

    SiteManifest m;
    m.base_dir = base_dir;
    if (!root.contains("site_id") || !root["site_id"].is_string() || root["site_id"].get<std::string>().empty())
        fail("InvalidManifest", "site_id missing");
    m.site_id = root["site_id"].get<std::string>();
    if (!root.contains("language") || !root["language"].is_string()) fail("UnknownLanguage", "<missing>");
    m.language = parse_language(root["language"].get<std::string>());

    if (!root.contains("stays") || !root["stays"].is_object()) fail("MissingColumn", "stays");
    const auto& st = root["stays"];
    reject_unknown(st,
                   {"file_path", "patient_column", "stay_column", "admit_column", "discharge_column",
                    "death_column", "age_column", "weight_column", "dialysis_column"},
                   "stays");
    m.stays.file_path = req_str(st, "file_path", "stays");
    m.stays.patient_column = req_str(st, "patient_column", "stays");
    m.stays.stay_column = req_str(st, "stay_column", "stays");
    m.stays.admit_column = req_str(st, "admit_column", "stays");
    m.stays.discharge_column = req_str(st, "discharge_column", "stays");
    m.stays.death_column = req_str(st, "death_column", "stays");
    m.stays.age_column = req_str(st, "age_column", "stays");
    m.stays.weight_column = opt_str(st, "weight_column");
    m.stays.dialysis_column = opt_str(st, "dialysis_column");

    if (!root.contains("tables") || !root["tables"].is_array()) fail("InvalidManifest", "tables must be a list");
    std::set<std::string> names;
    for (const auto& t : root["tables"]) {
        if (!t.is_object()) fail("InvalidManifest", "table entries must be objects");
        std::string name = t.contains("name") && t["name"].is_string() ? t["name"].get<std::string>() : "";
        if (name.empty()) fail("InvalidManifest", "table without name");
        reject_unknown(t,
                       {"name", "file_path", "event_type", "timestamp_column", "patient_column", "stay_column",
                        "excluded_columns", "columns"},
                       "tables." + name);
        if (!names.insert(name).second) fail("DuplicateTable", name);
        EventTableSpec spec;
        spec.name = name;
        spec.file_path = req_str(t, "file_path", name);
        spec.event_type = req_str(t, "event_type", name);
        spec.timestamp_column = req_str(t, "timestamp_column", name);
        spec.patient_column = req_str(t, "patient_column", name);
        spec.stay_column = req_str(t, "stay_column", name);
        spec.excluded_columns = opt_list(t, "excluded_columns", name);
        spec.columns = opt_list(t, "columns", name);
        m.tables.push_back(std::move(spec));
    }
    if (m.tables.empty()) fail("InvalidManifest", "no event tables");

    m.analyte_map = parse_var_map(root, "analyte_map");
    m.common_variable_map = parse_var_map(root, "common_variable_map");
    for (const auto* vmap : {&m.analyte_map, &m.common_variable_map}) {
        for (const auto& [var, src] : *vmap) {
            if (!m.table(src.table)) fail("InvalidManifest", var + " references unknown table " + src.table);
        }
    }

    if (check_files) {
        auto check_file = [&](const std::filesystem::path& p) {
            auto full = m.resolve(p);
            if (!std::filesystem::exists(full)) fail("MissingFile", full.string());
            return util::read_csv_header(full);
        };
        auto header = check_file(m.stays.file_path);
        require_columns(header,
                        {m.stays.patient_column, m.stays.stay_column, m.stays.admit_column,
                         m.stays.discharge_column, m.stays.death_column, m.stays.age_column,
                         m.stays.weight_column, m.stays.dialysis_column},
                        "stays");
        for (const auto& t : m.tables) {
            auto h = check_file(t.file_path);
            require_columns(h, {t.timestamp_column, t.patient_column, t.stay_column}, t.name);
            require_columns(h, t.columns, t.name);
        }
        for (const auto* vmap : {&m.analyte_map, &m.common_variable_map}) {
            for (const auto& [var, src] : *vmap) {
                const auto* t = m.table(src.table);
                auto h = util::read_csv_header(m.resolve(t->file_path));
                require_columns(h, {src.column, src.match_column}, var);
            }
        }
    }
    return m;
}

SiteManifest parse_manifest(const std::filesystem::path& path) {
    auto text = util::read_text(path);
    return parse_manifest_text(text, path.parent_path(), true);
}

std::string manifest_to_json(const SiteManifest& m) {
    json root;
    root["site_id"] = m.site_id;
    root["language"] = std::string(to_string(m.language));
    json st;
    st["file_path"] = m.stays.file_path.generic_string();
    st["patient_column"] = m.stays.patient_column;
    st["stay_column"] = m.stays.stay_column;
    st["admit_column"] = m.stays.admit_column;
    st["discharge_column"] = m.stays.discharge_column;
    st["death_column"] = m.stays.death_column;
    st["age_column"] = m.stays.age_column;
    if (!m.stays.weight_column.empty()) st["weight_column"] = m.stays.weight_column;
    if (!m.stays.dialysis_column.empty()) st["dialysis_column"] = m.stays.dialysis_column;
    root["stays"] = st;
    json tables = json::array();
    for (const auto& t : m.tables) {
        json j;
        j["name"] = t.name;
        j["file_path"] = t.file_path.generic_string();
        j["event_type"] = t.event_type;
        j["timestamp_column"] = t.timestamp_column;
        j["patient_column"] = t.patient_column;
        j["stay_column"] = t.stay_column;
        j["excluded_columns"] = t.excluded_columns;
        if (!t.columns.empty()) j["columns"] = t.columns;
        tables.push_back(j);
    }
    root["tables"] = tables;
    auto dump_map = [](const std::map<std::string, VariableSource>& vm) {
        json out = json::object();
        for (const auto& [k, v] : vm) {
            json j;
            j["table"] = v.table;
            j["column"] = v.column;
            j["unit_scale"] = v.unit_scale;
            if (!v.match_column.empty()) {
                j["match_column"] = v.match_column;
                j["match_value"] = v.match_value;
            }
            out[k] = j;
        }
        return out;
    };
    root["analyte_map"] = dump_map(m.analyte_map);
    root["common_variable_map"] = dump_map(m.common_variable_map);
    return root.dump(2);
}

}  // namespace mlehr::core
