#include "quad/csv.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace quad {

int CsvTable::col(const std::string& name) const {
  for (size_t i = 0; i < header.size(); ++i) {
    if (header[i] == name) return static_cast<int>(i);
  }
  throw CsvError("missing csv column: " + name);
}

std::string format_double(double value) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", value);
  return buf;
}

void write_csv(const std::string& path, const CsvTable& table) {
  std::ofstream out(path);
  if (!out) throw CsvError("cannot open for write: " + path);
  for (size_t i = 0; i < table.header.size(); ++i) {
    out << table.header[i] << (i + 1 < table.header.size() ? "," : "\n");
  }
  for (const auto& row : table.rows) {
    if (row.size() != table.header.size()) throw CsvError("row width mismatch");
    for (size_t i = 0; i < row.size(); ++i) {
      out << format_double(row[i]) << (i + 1 < row.size() ? "," : "\n");
    }
  }
}

CsvTable read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw CsvError("cannot open for read: " + path);
  CsvTable table;
  std::string line;
  if (!std::getline(in, line)) throw CsvError("empty csv: " + path);
  std::stringstream hs(line);
  std::string cell;
  while (std::getline(hs, cell, ',')) table.header.push_back(cell);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<double> row;
    std::stringstream rs(line);
    while (std::getline(rs, cell, ',')) {
      char* end = nullptr;
      row.push_back(std::strtod(cell.c_str(), &end));
      if (end == cell.c_str()) throw CsvError("non-numeric cell in " + path);
    }
    table.rows.push_back(std::move(row));
  }
  return table;
}

}  // namespace quad
