#pragma once

#include <string>
#include <vector>

namespace distcal {

// Minimal RFC-4180 style CSV: quoted fields, embedded quotes doubled,
// configurable delimiter. Leading lines starting with '#' are treated as
// metadata comments and skipped by the reader.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

CsvTable read_csv(const std::string& path, char delimiter);

std::string csv_quote(const std::string& field, char delimiter);

}  // namespace distcal
