#include "msnn/csv.hpp"

#include <charconv>
#include <cmath>
#include <fstream>

#include "msnn/error.hpp"

namespace msnn::csv {

std::vector<std::string> split_line(std::string_view line, std::size_t line_no) {
  std::vector<std::string> fields;
  std::string current;
  bool in_quotes = false;
  for (std::size_t k = 0; k < line.size(); ++k) {
    const char ch = line[k];
    if (in_quotes) {
      if (ch == '"') {
        if (k + 1 < line.size() && line[k + 1] == '"') {
          current.push_back('"');
          ++k;
        } else {
          in_quotes = false;
        }
      } else {
        current.push_back(ch);
      }
    } else if (ch == '"') {
      in_quotes = true;
    } else if (ch == ',') {
      fields.push_back(std::move(current));
      current.clear();
    } else {
      current.push_back(ch);
    }
  }
  if (in_quotes) throw ParseError("unterminated quoted field", line_no);
  fields.push_back(std::move(current));
  return fields;
}

std::string escape(std::string_view field) {
  if (field.find_first_of(",\"\n\r") == std::string_view::npos) return std::string(field);
  std::string out = "\"";
  for (char ch : field) {
    if (ch == '"') out.push_back('"');
    out.push_back(ch);
  }
  out.push_back('"');
  return out;
}

std::string format_double(double value) {
  if (std::isnan(value)) return "nan";
  if (std::isinf(value)) return value > 0 ? "inf" : "-inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, res.ptr);
}

std::string_view trim(std::string_view text) {
  const auto first = text.find_first_not_of(" \t");
  if (first == std::string_view::npos) return {};
  const auto last = text.find_last_not_of(" \t");
  return text.substr(first, last - first + 1);
}

double parse_double(std::string_view text, std::size_t line_no) {
  text = trim(text);
  if (text == "nan") return std::nan("");
  if (text == "inf") return HUGE_VAL;
  if (text == "-inf") return -HUGE_VAL;
  double value = 0.0;
  const auto* end = text.data() + text.size();
  const auto res = std::from_chars(text.data(), end, value);
  if (text.empty() || res.ec != std::errc{} || res.ptr != end) {
    throw ParseError("expected a real number, got '" + std::string(text) + "'", line_no);
  }
  return value;
}

long long parse_integer(std::string_view text, std::size_t line_no) {
  text = trim(text);
  long long value = 0;
  const auto* end = text.data() + text.size();
  const auto res = std::from_chars(text.data(), end, value);
  if (text.empty() || res.ec != std::errc{} || res.ptr != end) {
    throw ParseError("expected an integer, got '" + std::string(text) + "'", line_no);
  }
  return value;
}

std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "' for reading");
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(std::move(line));
  }
  if (!lines.empty() && lines.front().rfind("\xEF\xBB\xBF", 0) == 0) {
    lines.front().erase(0, 3);
  }
  return lines;
}

}  // namespace msnn::csv
