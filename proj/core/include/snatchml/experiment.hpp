#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "snatchml/analysis.hpp"
#include "snatchml/compression.hpp"
#include "snatchml/datasets.hpp"
#include "snatchml/error.hpp"
#include "snatchml/hijack.hpp"
#include "snatchml/network.hpp"
#include "snatchml/training.hpp"

namespace snatchml {

inline constexpr const char* kReportVersion = "1";

enum class DatasetKind { kDualBlobs, kCsv, kIdx };

struct DatasetConfig {
  DatasetKind kind = DatasetKind::kDualBlobs;
  DualBlobParams blobs;
  // csv: `path` (+ optional `test_path`, otherwise split); idx: images/labels
  // with an optional second label file carrying the hijack labels.
  std::string path;
  std::string test_path;
  std::string images;
  std::string labels;
  std::string hijack_labels;
  SplitSpec split;
};

struct ModelConfig {
  std::vector<int> hidden_widths = {32, 32};
  Activation activation = Activation::kRelu;
  double width_expansion = 1.0;
  InitSpec init;
  std::uint64_t seed = 0;
};

struct AttackConfig {
  std::string source = "last_hidden";  // logits | layer:<k> | last_hidden
  Metric metric = Metric::kL2;
  int n_max = 1;
  int samples_per_class = 1;
  std::uint64_t seed = 0;
};

struct AttackStudy {
  bool trained = true;  // false: attack the freshly initialized network
};

struct UnlearnStudy {
  UnlearnConfig unlearn;
  TrainConfig surrogate{100, 16, 0.05, 0, true};
};

struct CompressStudy {
  std::vector<double> grid;
  std::string selector = "topsis";  // topsis | scalarized
  TopsisConfig topsis;
  std::optional<double> alpha;      // scalarized only; no defaults
  std::optional<double> beta;
};

struct RatioSweepStudy {
  std::vector<int> n_values;
  std::vector<int> m_values;
  std::uint64_t seed = 0;
};

struct WidthSweepStudy {
  std::vector<double> expansions;
};

struct CorrelationStudy {
  int layer = 0;
  CorrelationPairing pairing = CorrelationPairing::kByIndex;
  std::string task_b = "hijack";  // hijack | original
  std::uint64_t model_b_seed = 0;
};

struct LogitTruncationStudy {
  std::vector<int> ks;
  bool trained = true;
};

struct JlCheckStudy {
  int dims_in = 64;
  int dims_out = 32;
  int n_points = 20;
  int n_trials = 10;
  ProjectionKind kind = ProjectionKind::kGaussian;
  std::uint64_t seed = 0;
};

using StudyParams = std::variant<AttackStudy, UnlearnStudy, CompressStudy, RatioSweepStudy,
                                 WidthSweepStudy, CorrelationStudy, LogitTruncationStudy,
                                 JlCheckStudy>;

std::string study_name(const StudyParams& study);

struct RunConfig {
  std::uint64_t seed = 0;
  std::string output_dir = "out";
  DatasetConfig dataset;
  ModelConfig model;
  TrainConfig train;
  AttackConfig attack;
  StudyParams study;
  // Relative file paths resolve against this directory (the config's own).
  std::filesystem::path base_dir;
};

struct ConfigIssue {
  std::string path;  // e.g. "attack.metric"
  std::string message;
};

// Thrown by parse_config with every violation found, not just the first.
class ConfigError : public Error {
 public:
  explicit ConfigError(std::vector<ConfigIssue> issues);
  const std::vector<ConfigIssue>& issues() const { return issues_; }

 private:
  std::vector<ConfigIssue> issues_;
};

RunConfig parse_config(const nlohmann::json& doc, const std::filesystem::path& base_dir = {});
RunConfig load_config(const std::filesystem::path& path);

// Fully resolved echo; parse_config(to_json(c)) reproduces c.
nlohmann::json to_json(const RunConfig& config);

// Runs the configured study and returns the report document without writing
// anything. Exports (CSV, model files) go to `export_dir` when given.
nlohmann::json run_study(const RunConfig& config,
                         const std::optional<std::filesystem::path>& export_dir = std::nullopt);

// run_study plus writing report.json and exports under the output directory.
// Returns the report path.
std::filesystem::path run(const RunConfig& config);

std::filesystem::path resolve_output_dir(const RunConfig& config);

}  // namespace snatchml
