#include "cams/csv.hpp"

#include <fstream>

#include "cams/errors.hpp"

namespace cams {

std::vector<std::string> csv_split(std::string_view line) {
    std::vector<std::string> out;
    std::string field;
    bool quoted = false;
    for (size_t i = 0; i < line.size(); ++i) {
        char c = line[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    field.push_back('"');
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                field.push_back(c);
            }
        } else if (c == '"' && field.empty()) {
            quoted = true;
        } else if (c == ',') {
            out.push_back(std::move(field));
            field.clear();
        } else if (c == '\r' && i + 1 == line.size()) {
            // tolerate CRLF input
        } else {
            field.push_back(c);
        }
    }
    out.push_back(std::move(field));
    return out;
}

std::string csv_escape(std::string_view field) {
    bool needs_quotes = field.find_first_of(",\"\n") != std::string_view::npos;
    if (!needs_quotes) return std::string(field);
    std::string out = "\"";
    for (char c : field) {
        if (c == '"') out += "\"\"";
        else out.push_back(c);
    }
    out.push_back('"');
    return out;
}

std::string csv_join(const std::vector<std::string>& fields) {
    std::string out;
    for (size_t i = 0; i < fields.size(); ++i) {
        if (i) out.push_back(',');
        out += csv_escape(fields[i]);
    }
    return out;
}

CsvFile read_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IngestError(path, 0, "", "cannot open file");
    CsvFile csv;
    std::string line;
    long lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line == "\r") continue;
        auto fields = csv_split(line);
        if (csv.header.empty()) {
            csv.header = std::move(fields);
            continue;
        }
        if (fields.size() != csv.header.size()) {
            throw IngestError(path, lineno, "",
                              "expected " + std::to_string(csv.header.size()) + " fields, got " +
                                  std::to_string(fields.size()));
        }
        csv.rows.push_back(std::move(fields));
        csv.line_numbers.push_back(lineno);
    }
    if (csv.header.empty()) throw IngestError(path, 0, "", "missing header row");
    return csv;
}

void write_csv(const std::string& path, const std::vector<std::string>& header,
               const std::vector<std::vector<std::string>>& rows) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IngestError(path, 0, "", "cannot open file for writing");
    out << csv_join(header) << '\n';
    for (const auto& row : rows) out << csv_join(row) << '\n';
}

}  // namespace cams
