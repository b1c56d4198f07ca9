#pragma once

#include <string>
#include <vector>

namespace phydiff {

// Shortest round-trip decimal form of a double.
std::string format_double(double v);

/// Header plus rows of already-formatted cells. Written with '\n' line ends
/// and no quoting (cells never contain commas).
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  void add_row(std::vector<std::string> row);
  void write(const std::string& path) const;
  [[nodiscard]] std::string to_string() const;
};

// Strict reader: every row must have exactly as many cells as the header.
CsvTable read_csv(const std::string& path);

}  // namespace phydiff
