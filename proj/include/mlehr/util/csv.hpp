#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace mlehr::util {

// RFC-4180 style table: header row plus data rows. Quoted fields may contain
// separators, doubled quotes and newlines.
struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    std::optional<size_t> column(const std::string& name) const;
};

// Throws Error("CsvParse", "<file>:<row>") on unterminated quotes or ragged rows.
CsvTable read_csv(const std::filesystem::path& path, char sep = ',');
CsvTable parse_csv(const std::string& text, const std::string& source_name, char sep = ',');
// Reads only the header row.
std::vector<std::string> read_csv_header(const std::filesystem::path& path, char sep = ',');

std::string csv_escape(const std::string& field, char sep = ',');
std::string csv_line(const std::vector<std::string>& fields, char sep = ',');

}  // namespace mlehr::util
