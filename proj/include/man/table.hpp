#pragma once

#include <optional>
#include <string>
#include <vector>

namespace man {

// A labeled grid of numbers. Missing cells print as "-" (text) or empty (CSV).
struct Table {
  std::vector<std::string> columns;  // header of the value columns
  std::string label_header = "domain";
  std::vector<std::string> labels;
  std::vector<std::vector<std::optional<double>>> rows;

  void add_row(std::string label, std::vector<std::optional<double>> values);
};

// Fixed-point with `decimals` places, '.' separator, no grouping.
std::string format_number(double value, int decimals = 4);

std::string render_text(const Table& table, int decimals = 4);
std::string render_csv(const Table& table, int decimals = 4);

}  // namespace man
