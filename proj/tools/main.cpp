// snatchml: validate, run and compare hijacking experiments.
//
// Exit codes: 0 ok, 1 compare found differences, 2 config/usage,
// 3 data/format, 4 numeric/training, 5 I/O.
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "snatchml/error.hpp"
#include "snatchml/experiment.hpp"
#include "snatchml/report.hpp"

namespace fs = std::filesystem;
using namespace snatchml;

namespace {

int cmd_validate(const std::string& path, bool print) {
  const auto config = load_config(path);
  if (print) {
    std::cout << to_json(config).dump(2) << '\n';
  } else {
    std::cout << path << ": ok (" << study_name(config.study) << ")\n";
  }
  return 0;
}

int cmd_run(const std::string& path, const std::optional<std::string>& output_dir) {
  auto config = load_config(path);
  if (output_dir) {
    config.output_dir = fs::absolute(*output_dir).string();
  }
  const auto report = run(config);
  std::cout << report.string() << '\n';
  return 0;
}

int cmd_compare(const std::string& a, const std::string& b, double tolerance) {
  const auto diffs = compare_reports(read_json_file(a), read_json_file(b), tolerance);
  for (const auto& d : diffs) {
    std::cout << d.path << ": " << d.a << " vs " << d.b;
    if (std::isfinite(d.delta)) std::cout << " (|delta| = " << d.delta << ")";
    std::cout << '\n';
  }
  std::cout << diffs.size() << " difference" << (diffs.size() == 1 ? "" : "s")
            << " beyond tolerance " << tolerance << '\n';
  return diffs.empty() ? 0 : 1;
}

int cmd_demo(const std::string& dir) {
  std::vector<fs::path> configs;
  std::error_code ec;
  for (const auto& entry : fs::directory_iterator(dir, ec)) {
    if (entry.path().extension() == ".json") configs.push_back(entry.path());
  }
  if (ec) fail(ErrorCode::kIo, "cannot list " + dir + ": " + ec.message());
  if (configs.empty()) fail(ErrorCode::kUsage, "no *.json configs in " + dir);
  std::sort(configs.begin(), configs.end());
  for (const auto& path : configs) {
    const auto config = load_config(path);
    const auto report = run(config);
    std::cout << path.filename().string() << " -> " << report.string() << '\n';
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Model-hijacking experiments on frozen networks"};
  app.require_subcommand(1);
  app.set_version_flag("--version", SNATCHML_VERSION);

  std::string config_path;
  bool print_resolved = false;
  auto* validate = app.add_subcommand("validate", "Check a run config and report every problem");
  validate->add_option("config", config_path, "Config file (JSON)")->required();
  validate->add_flag("--print", print_resolved, "Print the fully resolved config");

  std::optional<std::string> output_dir;
  auto* run_cmd = app.add_subcommand("run", "Run the study described by a config");
  run_cmd->add_option("config", config_path, "Config file (JSON)")->required();
  run_cmd->add_option("-o,--output-dir", output_dir, "Override the config's output_dir");

  std::string report_a;
  std::string report_b;
  double tolerance = 0.0;
  auto* compare = app.add_subcommand("compare", "Diff two reports of the same study");
  compare->add_option("report_a", report_a)->required();
  compare->add_option("report_b", report_b)->required();
  compare->add_option("-t,--tolerance", tolerance, "Absolute tolerance for numeric fields")
      ->check(CLI::NonNegativeNumber);

  std::string demo_dir = SNATCHML_DEFAULT_CONFIG_DIR;
  auto* demo = app.add_subcommand("demo", "Regenerate the reports of all bundled configs");
  demo->add_option("--configs", demo_dir, "Directory of configs");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : exit_code(ErrorCode::kUsage);
  }

  try {
    if (*validate) return cmd_validate(config_path, print_resolved);
    if (*run_cmd) return cmd_run(config_path, output_dir);
    if (*compare) return cmd_compare(report_a, report_b, tolerance);
    if (*demo) return cmd_demo(demo_dir);
  } catch (const Error& e) {
    std::cerr << "snatchml: " << to_string(e.code()) << ": " << e.what() << '\n';
    return exit_code(e.code());
  } catch (const fs::filesystem_error& e) {
    std::cerr << "snatchml: I/O error: " << e.what() << '\n';
    return exit_code(ErrorCode::kIo);
  } catch (const std::exception& e) {
    std::cerr << "snatchml: internal error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
