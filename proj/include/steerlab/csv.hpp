// SPDX-License-Identifier: Apache-2.0
#pragma once

// Minimal CSV used by every report: header row, comma separated, LF endings,
// numbers at six significant digits. Cells never contain commas or quotes.

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <limits>
#include <string>
#include <string_view>
#include <vector>

#include "steerlab/error.hpp"

namespace steerlab::csv {

// NaN renders as an empty cell.
inline std::string number(double v) {
  if (std::isnan(v)) return "";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

inline std::string join(const std::vector<std::string>& cells) {
  std::string line;
  for (std::size_t k = 0; k < cells.size(); ++k) {
    if (k) line += ',';
    line += cells[k];
  }
  line += '\n';
  return line;
}

inline std::vector<std::string> split(std::string_view line) {
  std::vector<std::string> cells;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    cells.emplace_back(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return cells;
}

inline double parse_number(const std::string& cell) {
  if (cell.empty()) return std::numeric_limits<double>::quiet_NaN();
  if (cell == "inf") return std::numeric_limits<double>::infinity();
  if (cell == "-inf") return -std::numeric_limits<double>::infinity();
  char* end = nullptr;
  const double v = std::strtod(cell.c_str(), &end);
  if (end != cell.c_str() + cell.size()) raise(ErrorKind::kFormat, "not a number: '" + cell + "'");
  return v;
}

inline long parse_int(const std::string& cell) {
  char* end = nullptr;
  const long v = std::strtol(cell.c_str(), &end, 10);
  if (cell.empty() || end != cell.c_str() + cell.size()) raise(ErrorKind::kFormat, "not an integer: '" + cell + "'");
  return v;
}

inline bool parse_bool(const std::string& cell) {
  if (cell == "1" || cell == "true") return true;
  if (cell == "0" || cell == "false") return false;
  raise(ErrorKind::kFormat, "not a boolean: '" + cell + "'");
}

// Rows of cells below a header that must equal `expected`.
inline std::vector<std::vector<std::string>> parse_table(std::string_view text,
                                                         const std::vector<std::string>& expected) {
  std::vector<std::vector<std::string>> rows;
  bool header = true;
  std::size_t pos = 0;
  while (pos < text.size()) {
    auto end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    auto line = text.substr(pos, end - pos);
    pos = end + 1;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) continue;
    auto cells = split(line);
    if (header) {
      if (cells != expected) raise(ErrorKind::kFormat, "unexpected CSV header '" + std::string(line) + "'");
      header = false;
      continue;
    }
    if (cells.size() != expected.size()) raise(ErrorKind::kFormat, "row width mismatch: '" + std::string(line) + "'");
    rows.push_back(std::move(cells));
  }
  if (header) raise(ErrorKind::kFormat, "missing CSV header");
  return rows;
}

}  // namespace steerlab::csv
