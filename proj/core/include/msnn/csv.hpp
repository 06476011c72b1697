#pragma once

// Minimal RFC-4180-style CSV helpers shared by the panel, ground-truth and
// report readers/writers.

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace msnn::csv {

// Splits one record. Fields may be double-quoted; "" inside quotes is a
// literal quote. Throws ParseError naming `line_no` on an unterminated quote.
std::vector<std::string> split_line(std::string_view line, std::size_t line_no);

// Quotes the field when it contains a comma, quote or newline.
std::string escape(std::string_view field);

// Shortest representation that parses back to the identical double.
std::string format_double(double value);

double parse_double(std::string_view text, std::size_t line_no);
long long parse_integer(std::string_view text, std::size_t line_no);

std::string_view trim(std::string_view text);

// Reads a whole file into lines, stripping '\r' and a leading UTF-8 BOM.
std::vector<std::string> read_lines(const std::string& path);

}  // namespace msnn::csv
