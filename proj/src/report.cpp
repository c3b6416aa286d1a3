#include "distcal/report.hpp"

#include <cstdio>
#include <fstream>

#include "distcal/csv.hpp"
#include "distcal/errors.hpp"

namespace distcal {

const char* const kToolVersion = "distcal 0.1.0";

nlohmann::json OutputMeta::to_json() const {
  return nlohmann::json{{"tool", tool_version}, {"config_hash", config_hash}, {"seed", seed}};
}

std::string fnv1a_hex(const std::string& text) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

OutputMeta make_meta(const nlohmann::json& config, std::uint64_t seed) {
  OutputMeta meta;
  meta.tool_version = kToolVersion;
  meta.config_hash = fnv1a_hex(config.dump());
  meta.seed = seed;
  return meta;
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

std::string table_to_csv(const OutputMeta& meta, const Table& table) {
  std::string out;
  out += "# tool=" + meta.tool_version + "\n";
  out += "# config_hash=" + meta.config_hash + "\n";
  out += "# seed=" + std::to_string(meta.seed) + "\n";
  for (std::size_t j = 0; j < table.header.size(); ++j) {
    if (j) out += ',';
    out += csv_quote(table.header[j], ',');
  }
  out += '\n';
  for (const auto& row : table.rows) {
    for (std::size_t j = 0; j < row.size(); ++j) {
      if (j) out += ',';
      out += csv_quote(row[j], ',');
    }
    out += '\n';
  }
  return out;
}

nlohmann::json table_to_json(const OutputMeta& meta, const Table& table) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& row : table.rows) {
    nlohmann::json obj;
    for (std::size_t j = 0; j < table.header.size(); ++j) obj[table.header[j]] = row[j];
    rows.push_back(std::move(obj));
  }
  return nlohmann::json{{"metadata", meta.to_json()}, {"rows", rows}};
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::Config, "cannot write file: " + path);
  out << content;
  if (!out) throw Error(ErrorKind::Config, "failed writing file: " + path);
}

}  // namespace distcal
