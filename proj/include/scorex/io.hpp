#pragma once

#include <string>

#include "json.hpp"
#include "scorex/common.hpp"

namespace scorex::io {

// Numeric matrix from a headerless CSV file, one row per line.  Blank lines
// are skipped, CR line endings tolerated.  Ragged rows or non-numeric cells
// raise ParseError carrying the 1-based line number; a file with no data rows
// raises EmptyData; an unreadable path raises ParseError with line 0.
Mat read_csv_matrix(const std::string& path);

Mat parse_csv_matrix(const std::string& text);

// Writes with 17 significant digits, so a read-back reproduces every value
// bit for bit.
void write_csv_matrix(const std::string& path, const Mat& m);

std::string csv_string(const Mat& m);

std::string read_text_file(const std::string& path);

void write_text_file(const std::string& path, const std::string& content);

// Parsed JSON document; parse failures raise ParseError with the line of the
// offending byte.
nlohmann::json read_json_file(const std::string& path);

// FNV-1a over the canonical dump (object keys sorted), as 16 hex digits.
// Stamped into every report so outputs can be traced back to their config.
std::string config_hash(const nlohmann::json& config);

}  // namespace scorex::io
