#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace cams {

// Minimal RFC4180-style CSV: quoted fields may contain commas, quotes are
// doubled inside quoted fields. No embedded newlines (none of our formats
// need them).
std::vector<std::string> csv_split(std::string_view line);
std::string csv_escape(std::string_view field);
std::string csv_join(const std::vector<std::string>& fields);

struct CsvFile {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;   // excludes header
    std::vector<long> line_numbers;               // 1-based source line per row
};

// Reads a whole CSV file with a header row. Blank lines are skipped.
// Throws IngestError on I/O failure or ragged rows.
CsvFile read_csv(const std::string& path);

void write_csv(const std::string& path, const std::vector<std::string>& header,
               const std::vector<std::vector<std::string>>& rows);

}  // namespace cams
