#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "engine.hpp"
#include "json.hpp"

namespace fkb::engine {

using Json = nlohmann::ordered_json;

inline constexpr const char* kReportSchema = "fkb-report/1";
inline constexpr const char* kReportCsvHeader = "seed,round,algorithm,model,alpha,grid,accuracy,loss";

// Shortest decimal form that parses back to the same double.
std::string format_double(double v);

Json config_to_json(const FederationConfig& cfg);
// Missing keys keep their defaults; unknown keys are rejected.
FederationConfig config_from_json(const Json& doc);

// Sets `a.b.c` in doc. The value is parsed as JSON when possible, otherwise
// stored as a string.
void apply_override(Json& doc, std::string_view dotted_key, std::string_view value);

Json read_json_file(const std::filesystem::path& path);

Json report_to_json(const RunReport& report, bool include_timing = false);
std::string report_json_text(const RunReport& report, bool include_timing = false);
std::string report_to_csv(const RunReport& report, bool header = true);

struct CsvRow {
  std::uint64_t seed = 0;
  int round = 0;
  std::string algorithm;
  std::string model;
  double alpha = 0.0;
  int grid = 0;
  double accuracy = 0.0;
  double loss = 0.0;
};

std::vector<CsvRow> parse_report_csv(std::string_view text);

// Every completed round in the JSON report has a matching CSV row and vice versa.
void cross_check(const Json& report, const std::vector<CsvRow>& rows);

void write_text(const std::filesystem::path& path, std::string_view text);
std::string read_text(const std::filesystem::path& path);

}  // namespace fkb::engine
