#include "mlehr/util/csv.hpp"

#include <fstream>
#include <sstream>

#include "mlehr/error.hpp"
#include "mlehr/util/fs.hpp"

namespace mlehr::util {

std::optional<size_t> CsvTable::column(const std::string& name) const {
    for (size_t i = 0; i < header.size(); ++i) {
        if (header[i] == name) return i;
    }
    return std::nullopt;
}

CsvTable parse_csv(const std::string& text, const std::string& source_name, char sep) {
    CsvTable table;
    std::vector<std::string> record;
    std::string field;
    bool in_quotes = false;
    bool field_started = false;
    size_t line = 1;
    size_t record_line = 1;

    auto end_record = [&]() {
        record.push_back(std::move(field));
        field.clear();
        field_started = false;
        bool blank = record.size() == 1 && record[0].empty();
        if (!blank) {
            if (table.header.empty() && table.rows.empty()) {
                table.header = std::move(record);
            } else {
                if (record.size() != table.header.size()) {
                    fail("CsvParse", source_name + ":" + std::to_string(record_line) + " expected " +
                                         std::to_string(table.header.size()) + " fields, got " +
                                         std::to_string(record.size()));
                }
                table.rows.push_back(std::move(record));
            }
        }
        record.clear();
    };

    for (size_t i = 0; i < text.size(); ++i) {
        char c = text[i];
        if (in_quotes) {
            if (c == '"') {
                if (i + 1 < text.size() && text[i + 1] == '"') {
                    field += '"';
                    ++i;
                } else {
                    in_quotes = false;
                }
            } else {
                if (c == '\n') ++line;
                field += c;
            }
            continue;
        }
        if (c == '"' && !field_started) {
            in_quotes = true;
            field_started = true;
        } else if (c == sep) {
            record.push_back(std::move(field));
            field.clear();
            field_started = false;
        } else if (c == '\r') {
            // tolerate CRLF
        } else if (c == '\n') {
            end_record();
            ++line;
            record_line = line;
        } else {
            field += c;
            field_started = true;
        }
    }
    if (in_quotes) fail("CsvParse", source_name + ":" + std::to_string(record_line) + " unterminated quote");
    if (!field.empty() || !record.empty()) end_record();
    if (table.header.empty()) fail("CsvParse", source_name + ":1 missing header row");
    return table;
}

CsvTable read_csv(const std::filesystem::path& path, char sep) {
    return parse_csv(read_text(path), path.string(), sep);
}

std::vector<std::string> read_csv_header(const std::filesystem::path& path, char sep) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail("IoError", "cannot open " + path.string());
    std::string line;
    std::getline(in, line);
    return parse_csv(line + "\n", path.string(), sep).header;
}

std::string csv_escape(const std::string& field, char sep) {
    bool needs = field.find_first_of(std::string{sep, '"', '\n', '\r'}) != std::string::npos;
    if (!needs) return field;
    std::string out = "\"";
    for (char c : field) {
        if (c == '"') out += '"';
        out += c;
    }
    out += '"';
    return out;
}

std::string csv_line(const std::vector<std::string>& fields, char sep) {
    std::string out;
    for (size_t i = 0; i < fields.size(); ++i) {
        if (i) out += sep;
        out += csv_escape(fields[i], sep);
    }
    out += '\n';
    return out;
}

}  // namespace mlehr::util
