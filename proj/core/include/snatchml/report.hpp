#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace snatchml {

nlohmann::json read_json_file(const std::filesystem::path& path);

// Two-space indented, trailing newline. Byte-stable for equal documents.
void write_json_file(const nlohmann::json& doc, const std::filesystem::path& path);

// Removes every "wall_clock_s" member at any depth.
nlohmann::json strip_wall_clock(nlohmann::json doc);

struct ReportDiff {
  std::string path;  // JSON pointer style, e.g. /payload/attack/top_n/0
  std::string a;
  std::string b;
  double delta = 0.0;  // |a - b| for numbers, +inf for structural mismatches
};

// Field-wise comparison; numbers differing by more than `tolerance` are
// listed, everything else must match exactly. Wall-clock fields are ignored.
// Reports of different study types raise a usage error.
std::vector<ReportDiff> compare_reports(const nlohmann::json& a, const nlohmann::json& b,
                                        double tolerance);

// Structural check mirroring schemas/report.schema.json. Empty when valid.
std::vector<std::string> check_report_structure(const nlohmann::json& report);

}  // namespace snatchml
