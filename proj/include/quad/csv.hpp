#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace quad {

struct CsvError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;

  int col(const std::string& name) const;  // throws CsvError if absent
};

// Doubles are written with 17 significant digits so tables round-trip
// bit-exactly through read_csv.
void write_csv(const std::string& path, const CsvTable& table);
CsvTable read_csv(const std::string& path);

std::string format_double(double value);

}  // namespace quad
