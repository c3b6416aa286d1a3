#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

namespace distcal {

// Reproducibility header embedded in every output file: tool version, a hash
// of the canonical config serialization, and the seed.
struct OutputMeta {
  std::string tool_version;
  std::string config_hash;
  std::uint64_t seed = 0;

  nlohmann::json to_json() const;
};

extern const char* const kToolVersion;

std::string fnv1a_hex(const std::string& text);

OutputMeta make_meta(const nlohmann::json& config, std::uint64_t seed);

std::string format_double(double v);

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

// CSV with '#' metadata preamble, RFC-4180 quoting, '.' decimals.
std::string table_to_csv(const OutputMeta& meta, const Table& table);

nlohmann::json table_to_json(const OutputMeta& meta, const Table& table);

void write_text_file(const std::string& path, const std::string& content);

}  // namespace distcal
