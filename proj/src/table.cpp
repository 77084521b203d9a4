#include "man/table.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "man/errors.hpp"

namespace man {

void Table::add_row(std::string label, std::vector<std::optional<double>> values) {
  if (values.size() != columns.size()) {
    throw DimensionError("table row '" + label + "' has " + std::to_string(values.size()) +
                         " cells for " + std::to_string(columns.size()) + " columns");
  }
  labels.push_back(std::move(label));
  rows.push_back(std::move(values));
}

std::string format_number(double value, int decimals) {
  if (std::isnan(value)) return "nan";
  if (std::isinf(value)) return value > 0 ? "inf" : "-inf";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, value);
  std::string s = buf;
  if (s.find_first_not_of("-0.") == std::string::npos && s[0] == '-') s.erase(0, 1);
  return s;
}

std::string render_text(const Table& table, int decimals) {
  std::vector<std::vector<std::string>> cells;
  cells.push_back({table.label_header});
  for (const auto& c : table.columns) cells.back().push_back(c);
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    std::vector<std::string> line{table.labels[r]};
    for (const auto& v : table.rows[r]) line.push_back(v ? format_number(*v, decimals) : "-");
    cells.push_back(std::move(line));
  }
  std::vector<std::size_t> width(table.columns.size() + 1, 0);
  for (const auto& line : cells) {
    for (std::size_t c = 0; c < line.size(); ++c) width[c] = std::max(width[c], line[c].size());
  }
  std::string out;
  for (const auto& line : cells) {
    for (std::size_t c = 0; c < line.size(); ++c) {
      const std::string pad(width[c] - line[c].size(), ' ');
      if (c == 0) {
        out += line[c] + pad;
      } else {
        out += "  " + pad + line[c];
      }
    }
    out += '\n';
  }
  return out;
}

std::string render_csv(const Table& table, int decimals) {
  std::string out = table.label_header;
  for (const auto& c : table.columns) out += "," + c;
  out += '\n';
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    out += table.labels[r];
    for (const auto& v : table.rows[r]) {
      out += ',';
      if (v) out += format_number(*v, decimals);
    }
    out += '\n';
  }
  return out;
}

}  // namespace man
