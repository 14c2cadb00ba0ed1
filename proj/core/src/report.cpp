#include "snatchml/report.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <sstream>

#include "snatchml/error.hpp"

namespace snatchml {

using nlohmann::json;
namespace fs = std::filesystem;

json read_json_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kIo, "cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    fail(ErrorCode::kFormat, path.string() + ": invalid JSON: " + e.what());
  }
}

void write_json_file(const json& doc, const fs::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::kIo, "cannot write " + path.string());
  out << doc.dump(2) << '\n';
  if (!out) fail(ErrorCode::kIo, "write failed for " + path.string());
}

json strip_wall_clock(json doc) {
  if (doc.is_object()) {
    doc.erase("wall_clock_s");
    for (auto& [k, v] : doc.items()) v = strip_wall_clock(std::move(v));
  } else if (doc.is_array()) {
    for (auto& v : doc) v = strip_wall_clock(std::move(v));
  }
  return doc;
}

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

std::string brief(const json& v) {
  auto s = v.dump();
  if (s.size() > 60) s = s.substr(0, 57) + "...";
  return s;
}

void walk(const json& a, const json& b, const std::string& path, double tol,
          std::vector<ReportDiff>& out) {
  if (a.is_number() && b.is_number()) {
    const double x = a.get<double>();
    const double y = b.get<double>();
    const double delta = std::abs(x - y);
    if (delta > tol || std::isnan(delta)) out.push_back({path, brief(a), brief(b), delta});
    return;
  }
  if (a.type() != b.type()) {
    out.push_back({path, brief(a), brief(b), kInf});
    return;
  }
  if (a.is_object()) {
    std::set<std::string> keys;
    for (const auto& [k, v] : a.items()) keys.insert(k);
    for (const auto& [k, v] : b.items()) keys.insert(k);
    for (const auto& k : keys) {
      if (k == "wall_clock_s") continue;
      const auto child = path + "/" + k;
      if (!a.contains(k)) {
        out.push_back({child, "<missing>", brief(b.at(k)), kInf});
      } else if (!b.contains(k)) {
        out.push_back({child, brief(a.at(k)), "<missing>", kInf});
      } else {
        walk(a.at(k), b.at(k), child, tol, out);
      }
    }
    return;
  }
  if (a.is_array()) {
    if (a.size() != b.size()) {
      out.push_back({path + "/length", std::to_string(a.size()), std::to_string(b.size()), kInf});
    }
    const auto n = std::min(a.size(), b.size());
    for (std::size_t i = 0; i < n; ++i) walk(a[i], b[i], path + "/" + std::to_string(i), tol, out);
    return;
  }
  if (a != b) out.push_back({path, brief(a), brief(b), kInf});
}

}  // namespace

std::vector<ReportDiff> compare_reports(const json& a, const json& b, double tolerance) {
  if (!(tolerance >= 0.0)) fail(ErrorCode::kUsage, "tolerance must be >= 0");
  const auto study_of = [](const json& r) -> std::string {
    if (!r.is_object() || !r.contains("study") || !r.at("study").is_string()) {
      fail(ErrorCode::kUsage, "document is not a report (no study field)");
    }
    return r.at("study").get<std::string>();
  };
  const auto sa = study_of(a);
  const auto sb = study_of(b);
  if (sa != sb) fail(ErrorCode::kUsage, "cannot compare a '" + sa + "' report with a '" + sb + "' report");
  std::vector<ReportDiff> out;
  walk(a, b, "", tolerance, out);
  return out;
}

// ---------------------------------------------------------------------------

namespace {

class Checker {
 public:
  std::vector<std::string> problems;

  const json* member(const json& obj, const std::string& path, const char* key) {
    if (!obj.is_object() || !obj.contains(key)) {
      problems.push_back(path + "/" + key + ": missing");
      return nullptr;
    }
    return &obj.at(key);
  }

  const json* object(const json& obj, const std::string& path, const char* key) {
    const json* v = member(obj, path, key);
    if (v && !v->is_object()) {
      problems.push_back(path + "/" + key + ": expected an object");
      return nullptr;
    }
    return v;
  }

  const json* array(const json& obj, const std::string& path, const char* key) {
    const json* v = member(obj, path, key);
    if (v && !v->is_array()) {
      problems.push_back(path + "/" + key + ": expected an array");
      return nullptr;
    }
    return v;
  }

  void number(const json& obj, const std::string& path, const char* key, bool nullable = false) {
    const json* v = member(obj, path, key);
    if (v && !v->is_number() && !(nullable && v->is_null())) {
      problems.push_back(path + "/" + key + ": expected a number");
    }
  }

  void string(const json& obj, const std::string& path, const char* key) {
    const json* v = member(obj, path, key);
    if (v && !v->is_string()) problems.push_back(path + "/" + key + ": expected a string");
  }

  void curve(const json& obj, const std::string& path, const char* key) {
    const json* c = object(obj, path, key);
    if (!c) return;
    const auto cp = path + "/" + key;
    string(*c, cp, "axis");
    array(*c, cp, "seeds");
    const json* pts = array(*c, cp, "points");
    if (!pts) return;
    for (std::size_t i = 0; i < pts->size(); ++i) {
      const auto pp = cp + "/points/" + std::to_string(i);
      number((*pts)[i], pp, "x");
      if (const json* m = object((*pts)[i], pp, "metrics")) {
        for (const auto& [k, v] : m->items()) {
          if (!v.is_number()) problems.push_back(pp + "/metrics/" + k + ": expected a number");
        }
      }
    }
  }

  void attack(const json& obj, const std::string& path, const char* key) {
    const json* a = object(obj, path, key);
    if (!a) return;
    const auto ap = path + "/" + key;
    if (const json* t = array(*a, ap, "top_n"); t && t->empty()) {
      problems.push_back(ap + "/top_n: must not be empty");
    }
    number(*a, ap, "lower_bound");
    number(*a, ap, "m");
    string(*a, ap, "metric");
    string(*a, ap, "source");
  }
};

const std::set<std::string> kStudies = {"attack",      "unlearn",          "compress",
                                        "ratio_sweep", "width_sweep",      "correlation",
                                        "logit_truncation", "jl_check"};

}  // namespace

std::vector<std::string> check_report_structure(const json& report) {
  Checker c;
  if (!report.is_object()) return {"report must be a JSON object"};
  for (const auto& [k, v] : report.items()) {
    static const std::set<std::string> top = {"version", "study", "config", "payload", "seeds",
                                              "wall_clock_s"};
    if (!top.count(k)) c.problems.push_back("/" + k + ": unexpected top-level key");
  }
  c.string(report, "", "version");
  c.string(report, "", "study");
  c.number(report, "", "wall_clock_s");
  const json* config = c.object(report, "", "config");
  const json* seeds = c.object(report, "", "seeds");
  const json* payload = c.object(report, "", "payload");
  if (seeds) {
    for (const auto& [k, v] : seeds->items()) {
      if (!v.is_number_unsigned()) c.problems.push_back("/seeds/" + k + ": expected a non-negative integer");
    }
  }
  if (!report.contains("study") || !report.at("study").is_string()) return c.problems;
  const auto study = report.at("study").get<std::string>();
  if (!kStudies.count(study)) {
    c.problems.push_back("/study: unknown study '" + study + "'");
    return c.problems;
  }
  if (config) {
    const json* st = c.object(*config, "/config", "study");
    if (st && (!st->contains("type") || st->at("type") != study)) {
      c.problems.push_back("/config/study/type: does not match /study");
    }
  }
  if (!payload) return c.problems;
  const json& p = *payload;
  const std::string pp = "/payload";
  if (study == "attack") {
    c.attack(p, pp, "attack");
    c.attack(p, pp, "logits_attack");
    c.object(p, pp, "model");
    c.member(p, pp, "train");
  } else if (study == "unlearn") {
    if (const json* rows = c.array(p, pp, "rows")) {
      if (rows->size() != 2) c.problems.push_back(pp + "/rows: expected 2 rows");
      for (std::size_t i = 0; i < rows->size(); ++i) {
        const auto rp = pp + "/rows/" + std::to_string(i);
        c.string((*rows)[i], rp, "model");
        c.number((*rows)[i], rp, "original_acc");
        c.number((*rows)[i], rp, "surrogate_hijack_acc");
        c.number((*rows)[i], rp, "snatch_top1");
      }
    }
    c.number(p, pp, "original_acc_drop");
    c.number(p, pp, "surrogate_drop");
  } else if (study == "compress") {
    if (const json* rows = c.array(p, pp, "candidates")) {
      int selected = 0;
      for (std::size_t i = 0; i < rows->size(); ++i) {
        const auto rp = pp + "/candidates/" + std::to_string(i);
        const json& row = (*rows)[i];
        c.number(row, rp, "expansion");
        c.number(row, rp, "params");
        for (const char* k : {"loss", "original_acc", "hijack_top1_logits", "hijack_top1_fv",
                              "closeness"}) {
          c.number(row, rp, k, true);
        }
        if (const json* s = c.member(row, rp, "selected")) {
          if (!s->is_boolean()) c.problems.push_back(rp + "/selected: expected a boolean");
          else if (s->get<bool>()) ++selected;
        }
      }
      if (selected != 1) c.problems.push_back(pp + "/candidates: expected exactly one selected row");
    }
    c.number(p, pp, "selected_index");
    c.string(p, pp, "selector");
    c.object(p, pp, "comparison");
  } else if (study == "ratio_sweep") {
    c.curve(p, pp, "curve");
    c.number(p, pp, "spearman_r_top1", true);
  } else if (study == "width_sweep") {
    c.curve(p, pp, "curve");
    c.number(p, pp, "spearman_expansion_top1", true);
  } else if (study == "correlation") {
    c.number(p, pp, "layer");
    c.string(p, pp, "pairing");
    if (const json* vals = c.array(p, pp, "values")) {
      for (const auto& v : *vals) {
        if (!v.is_number() || v.get<double>() < -1.0 || v.get<double>() > 1.0) {
          c.problems.push_back(pp + "/values: entries must be numbers in [-1, 1]");
          break;
        }
      }
    }
    c.number(p, pp, "mean", true);
    c.number(p, pp, "median", true);
    c.number(p, pp, "fraction_positive");
  } else if (study == "logit_truncation") {
    c.curve(p, pp, "curve");
    c.number(p, pp, "untruncated_top1");
    c.number(p, pp, "n");
  } else {
    c.array(p, pp, "max_distortions");
    c.number(p, pp, "median_max_distortion");
    c.number(p, pp, "mean_max_distortion");
    c.number(p, pp, "relu_ratio_mean");
  }
  return c.problems;
}

}  // namespace snatchml
