#include <doctest.h>

#include <algorithm>

#include "snatchml/experiment.hpp"
#include "snatchml/report.hpp"
#include "test_util.hpp"

using namespace snatchml;
using nlohmann::json;

namespace {

const std::filesystem::path kConfigDir = std::filesystem::path(SNATCHML_SOURCE_DIR) / "configs";

std::vector<ConfigIssue> issues_of(const json& doc, const std::filesystem::path& base = {}) {
  try {
    parse_config(doc, base);
  } catch (const ConfigError& e) {
    return e.issues();
  }
  return {};
}

bool has_issue(const std::vector<ConfigIssue>& issues, const std::string& path) {
  return std::any_of(issues.begin(), issues.end(), [&](const ConfigIssue& i) { return i.path == path; });
}

// A quick attack config: small network, few epochs.
json small_attack(const std::filesystem::path& out) {
  auto doc = read_json_file(kConfigDir / "attack.json");
  doc["output_dir"] = out.string();
  doc["model"]["hidden_widths"] = {16, 16};
  doc["train"]["epochs"] = 5;
  return doc;
}

std::string problems(const json& report) {
  std::string out;
  for (const auto& p : check_report_structure(report)) out += p + "\n";
  return out;
}

}  // namespace

TEST_SUITE("experiment") {

TEST_CASE("minimal config fills defaults") {
  const auto c = parse_config(json::parse(R"({"study": {"type": "attack"}})"));
  CHECK(study_name(c.study) == "attack");
  CHECK(c.attack.metric == Metric::kL2);
  CHECK(c.model.hidden_widths == std::vector<int>{32, 32});
}

TEST_CASE("config errors are collected with their paths") {
  auto doc = json::parse(R"({"study": {"type": "attack"}, "attack": {"metric": "l3"}})");
  auto issues = issues_of(doc);
  REQUIRE(issues.size() == 1);
  CHECK(issues[0].path == "attack.metric");

  doc["train"] = {{"epochs", -1}, {"batch_size", 0}};
  issues = issues_of(doc);
  CHECK(issues.size() == 3);
  CHECK(has_issue(issues, "train.epochs"));
  CHECK(has_issue(issues, "train.batch_size"));

  CHECK(has_issue(issues_of(json::parse(R"({"study": {"type": "attack"}, "colour": 1})")), "colour"));
  CHECK(has_issue(issues_of(json::parse(R"({"study": {"type": "pizza"}})")), "study.type"));
  CHECK(!issues_of(json::parse(R"({})")).empty());

  const auto dir = test_util::scratch_dir("config_missing");
  const auto missing = json::parse(R"({"study": {"type": "attack"},
      "dataset": {"kind": "csv", "path": "nope.csv"}})");
  CHECK(has_issue(issues_of(missing, dir), "dataset.path"));

  try {
    parse_config(json::parse(R"({"study": {"type": "attack"}, "attack": {"metric": "l3"}})"));
    FAIL("expected a config error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kConfig);
  }
}

TEST_CASE("bundled configs parse and round-trip through to_json") {
  int seen = 0;
  for (const auto& entry : std::filesystem::directory_iterator(kConfigDir)) {
    if (entry.path().extension() != ".json") continue;
    ++seen;
    CAPTURE(entry.path().string());
    const auto c = load_config(entry.path());
    const auto echo = to_json(c);
    CHECK(to_json(parse_config(echo, c.base_dir)) == echo);
  }
  CHECK(seen >= 8);
}

TEST_CASE("attack run: report contents, determinism, comparison") {
  const auto dir = test_util::scratch_dir("experiment_attack");
  const auto cfg_path = dir / "attack.json";
  write_json_file(small_attack(dir / "out"), cfg_path);
  const auto before = test_util::read_bytes(cfg_path);

  const auto c = load_config(cfg_path);
  const auto report_path = run(c);
  CHECK(report_path == dir / "out" / "report.json");
  CHECK(std::filesystem::exists(dir / "out" / "model.snml"));
  CHECK(std::filesystem::exists(dir / "out" / "bek_test.csv"));
  CHECK(test_util::read_bytes(cfg_path) == before);

  const auto a = read_json_file(report_path);
  CHECK(problems(a) == "");
  const auto& attack = a.at("payload").at("attack");
  CHECK(attack.at("top_n").size() == 8);
  CHECK(attack.at("lower_bound").get<double>() == 0.125);
  CHECK(attack.at("top_n").back().get<double>() == 1.0);

  const auto b = run_study(c);
  CHECK(strip_wall_clock(a) == strip_wall_clock(b));
  CHECK(compare_reports(a, b, 0.0).empty());
  CHECK(load_network(dir / "out" / "model.snml").widths() == std::vector<int>{8, 16, 16, 4});
}

TEST_CASE("compress run lists the whole grid and selects one row") {
  auto doc = read_json_file(kConfigDir / "compress.json");
  doc["model"]["hidden_widths"] = {16, 16};
  doc["train"]["epochs"] = 3;
  const auto report = run_study(parse_config(doc, kConfigDir));
  CHECK(problems(report) == "");
  const auto& rows = report.at("payload").at("candidates");
  REQUIRE(rows.size() == 14);
  int selected = 0;
  for (const auto& r : rows) selected += r.at("selected").get<bool>() ? 1 : 0;
  CHECK(selected == 1);
  CHECK(rows.at(report.at("payload").at("selected_index").get<std::size_t>()).at("selected") == true);
}

TEST_CASE("compare_reports tolerance and study mismatch") {
  const json a = {{"study", "attack"}, {"wall_clock_s", 1.0}, {"payload", {{"x", 0.5}, {"y", {1, 2}}}}};
  json b = a;
  b["wall_clock_s"] = 99.0;
  CHECK(compare_reports(a, b, 0.0).empty());
  b["payload"]["x"] = 0.7;
  const auto diffs = compare_reports(a, b, 0.01);
  REQUIRE(diffs.size() == 1);
  CHECK(diffs[0].path == "/payload/x");
  CHECK(diffs[0].delta == doctest::Approx(0.2));
  CHECK(compare_reports(a, b, 0.25).empty());
  b["payload"]["y"] = json::array({1});
  CHECK(compare_reports(a, b, 0.25).size() == 1);

  json other = a;
  other["study"] = "unlearn";
  CHECK_THROWS_AS(compare_reports(a, other, 0.0), Error);
  CHECK_THROWS_AS(compare_reports(a, a, -1.0), Error);
}

TEST_CASE("report structure checker flags problems") {
  CHECK(!check_report_structure(json::array()).empty());
  json r = {{"version", "1"}, {"study", "jl_check"}, {"config", {{"study", {{"type", "jl_check"}}}}},
            {"seeds", {{"seed", 0u}}}, {"wall_clock_s", 0.1}, {"payload", json::object()}};
  CHECK(!check_report_structure(r).empty());
  r["payload"] = {{"max_distortions", json::array({0.1})}, {"median_max_distortion", 0.1},
                  {"mean_max_distortion", 0.1}, {"relu_ratio_mean", 0.7}};
  CHECK(problems(r) == "");
  r["extra"] = 1;
  CHECK(!check_report_structure(r).empty());
}

TEST_CASE("json io errors carry their codes") {
  const auto dir = test_util::scratch_dir("json_io");
  try {
    read_json_file(dir / "absent.json");
    FAIL("expected an I/O error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kIo);
  }
  test_util::write_text(dir / "bad.json", "{not json");
  try {
    read_json_file(dir / "bad.json");
    FAIL("expected a format error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kFormat);
  }
}

}  // TEST_SUITE
