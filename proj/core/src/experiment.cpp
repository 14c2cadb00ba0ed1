#include "snatchml/experiment.hpp"

#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <type_traits>

#include "snatchml/report.hpp"
#include "snatchml/rng.hpp"

namespace snatchml {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::string join_issues(const std::vector<ConfigIssue>& issues) {
  std::ostringstream out;
  out << issues.size() << " config error" << (issues.size() == 1 ? "" : "s");
  for (const auto& i : issues) out << "\n  " << i.path << ": " << i.message;
  return out.str();
}

}  // namespace

ConfigError::ConfigError(std::vector<ConfigIssue> issues)
    : Error(ErrorCode::kConfig, join_issues(issues)), issues_(std::move(issues)) {}

std::string study_name(const StudyParams& study) {
  return std::visit(
      [](const auto& s) -> std::string {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, AttackStudy>) return "attack";
        else if constexpr (std::is_same_v<T, UnlearnStudy>) return "unlearn";
        else if constexpr (std::is_same_v<T, CompressStudy>) return "compress";
        else if constexpr (std::is_same_v<T, RatioSweepStudy>) return "ratio_sweep";
        else if constexpr (std::is_same_v<T, WidthSweepStudy>) return "width_sweep";
        else if constexpr (std::is_same_v<T, CorrelationStudy>) return "correlation";
        else if constexpr (std::is_same_v<T, LogitTruncationStudy>) return "logit_truncation";
        else return "jl_check";
      },
      study);
}

// ---------------------------------------------------------------------------
// Config parsing

namespace {

// Seed tags for sub-seeds left out of a config.
enum : std::uint64_t {
  kTagDataset = 1,
  kTagSplit,
  kTagModel,
  kTagTrain,
  kTagAttack,
  kTagStudy,
  kTagSurrogate,
};

std::string join_path(const std::string& prefix, const std::string& key) {
  return prefix.empty() ? key : prefix + "." + key;
}

// Reads typed values out of a JSON tree, recording every problem instead of
// stopping at the first one.
class Reader {
 public:
  explicit Reader(std::vector<ConfigIssue>& issues) : issues_(issues) {}

  void issue(const std::string& path, const std::string& message) {
    issues_.push_back({path, message});
  }

  const json& section(const json& parent, const char* key, const std::string& path) {
    static const json empty = json::object();
    if (!parent.is_object() || !parent.contains(key)) return empty;
    const json& v = parent.at(key);
    if (!v.is_object()) {
      issue(path, "expected an object");
      return empty;
    }
    return v;
  }

  void allow_keys(const json& obj, const std::string& prefix, std::initializer_list<const char*> keys) {
    if (!obj.is_object()) return;
    std::set<std::string> allowed(keys.begin(), keys.end());
    for (const auto& [k, v] : obj.items()) {
      if (!allowed.count(k)) issue(join_path(prefix, k), "unknown key");
    }
  }

  long long integer(const json& obj, const std::string& prefix, const char* key, long long def,
                    long long lo, long long hi) {
    if (!obj.contains(key)) return def;
    const auto path = join_path(prefix, key);
    const json& v = obj.at(key);
    if (!v.is_number_integer()) {
      issue(path, "expected an integer");
      return def;
    }
    const long long x = v.is_number_unsigned()
                            ? static_cast<long long>(std::min<std::uint64_t>(
                                  v.get<std::uint64_t>(), std::numeric_limits<long long>::max()))
                            : v.get<long long>();
    if (x < lo || x > hi) {
      issue(path, "must be in [" + std::to_string(lo) + ", " + std::to_string(hi) + "], got " +
                      std::to_string(x));
      return def;
    }
    return x;
  }

  int int_value(const json& obj, const std::string& prefix, const char* key, int def, int lo,
                int hi = std::numeric_limits<int>::max()) {
    return static_cast<int>(integer(obj, prefix, key, def, lo, hi));
  }

  std::uint64_t seed(const json& obj, const std::string& prefix, const char* key,
                     std::uint64_t def) {
    if (!obj.contains(key)) return def;
    const json& v = obj.at(key);
    if (v.is_number_unsigned()) return v.get<std::uint64_t>();
    issue(join_path(prefix, key), "expected a non-negative integer seed");
    return def;
  }

  double real(const json& obj, const std::string& prefix, const char* key, double def,
              const std::function<bool(double)>& ok = {}, const char* requirement = "") {
    if (!obj.contains(key)) return def;
    const auto path = join_path(prefix, key);
    const json& v = obj.at(key);
    if (!v.is_number()) {
      issue(path, "expected a number");
      return def;
    }
    const double x = v.get<double>();
    if (!std::isfinite(x) || (ok && !ok(x))) {
      issue(path, std::string("must be ") + requirement);
      return def;
    }
    return x;
  }

  std::optional<double> optional_real(const json& obj, const std::string& prefix, const char* key,
                                      const std::function<bool(double)>& ok,
                                      const char* requirement) {
    if (!obj.contains(key) || obj.at(key).is_null()) return std::nullopt;
    const auto before = issues_.size();
    const double x = real(obj, prefix, key, 0.0, ok, requirement);
    if (issues_.size() != before) return std::nullopt;
    return x;
  }

  bool boolean(const json& obj, const std::string& prefix, const char* key, bool def) {
    if (!obj.contains(key)) return def;
    if (!obj.at(key).is_boolean()) {
      issue(join_path(prefix, key), "expected true or false");
      return def;
    }
    return obj.at(key).get<bool>();
  }

  std::string string(const json& obj, const std::string& prefix, const char* key,
                     const std::string& def) {
    if (!obj.contains(key)) return def;
    if (!obj.at(key).is_string()) {
      issue(join_path(prefix, key), "expected a string");
      return def;
    }
    return obj.at(key).get<std::string>();
  }

  template <class E>
  E choice(const json& obj, const std::string& prefix, const char* key, E def,
           const std::vector<std::pair<const char*, E>>& options) {
    if (!obj.contains(key)) return def;
    const auto path = join_path(prefix, key);
    std::string expected;
    for (const auto& [name, value] : options) expected += (expected.empty() ? "" : " | ") + std::string(name);
    if (!obj.at(key).is_string()) {
      issue(path, "expected one of " + expected);
      return def;
    }
    const auto text = obj.at(key).get<std::string>();
    for (const auto& [name, value] : options) {
      if (text == name) return value;
    }
    issue(path, "unknown value '" + text + "' (expected " + expected + ")");
    return def;
  }

  std::vector<int> int_list(const json& obj, const std::string& prefix, const char* key,
                            const std::vector<int>& def, int lo, bool allow_empty = false) {
    if (!obj.contains(key)) return def;
    const auto path = join_path(prefix, key);
    const json& v = obj.at(key);
    if (!v.is_array()) {
      issue(path, "expected a list of integers");
      return def;
    }
    if (v.empty() && !allow_empty) {
      issue(path, "must not be empty");
      return def;
    }
    std::vector<int> out;
    for (std::size_t i = 0; i < v.size(); ++i) {
      const auto item = path + "[" + std::to_string(i) + "]";
      if (!v[i].is_number_integer() || v[i].get<long long>() < lo ||
          v[i].get<long long>() > std::numeric_limits<int>::max()) {
        issue(item, "expected an integer >= " + std::to_string(lo));
        return def;
      }
      out.push_back(v[i].get<int>());
    }
    return out;
  }

  std::vector<double> positive_list(const json& obj, const std::string& prefix, const char* key,
                                    const std::vector<double>& def) {
    if (!obj.contains(key)) return def;
    const auto path = join_path(prefix, key);
    const json& v = obj.at(key);
    if (!v.is_array() || v.empty()) {
      issue(path, "expected a non-empty list of numbers");
      return def;
    }
    std::vector<double> out;
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (!v[i].is_number() || !(v[i].get<double>() > 0.0) || !std::isfinite(v[i].get<double>())) {
        issue(path + "[" + std::to_string(i) + "]", "expected a positive number");
        return def;
      }
      out.push_back(v[i].get<double>());
    }
    return out;
  }

 private:
  std::vector<ConfigIssue>& issues_;
};

const std::vector<std::pair<const char*, Activation>> kActivations = {
    {"relu", Activation::kRelu}, {"tanh", Activation::kTanh}};
const std::vector<std::pair<const char*, InitKind>> kInits = {
    {"he", InitKind::kHe}, {"gaussian", InitKind::kGaussian}};
const std::vector<std::pair<const char*, Metric>> kMetrics = {
    {"l2", Metric::kL2}, {"cosine", Metric::kCosine}};
const std::vector<std::pair<const char*, Stratify>> kStratify = {
    {"original", Stratify::kOriginal}, {"hijack", Stratify::kHijack}, {"none", Stratify::kNone}};
const std::vector<std::pair<const char*, DatasetKind>> kDatasetKinds = {
    {"dual_blobs", DatasetKind::kDualBlobs}, {"csv", DatasetKind::kCsv}, {"idx", DatasetKind::kIdx}};
const std::vector<std::pair<const char*, DirectionMode>> kDirections = {
    {"random", DirectionMode::kRandom}, {"orthogonal", DirectionMode::kOrthogonal}};
const std::vector<std::pair<const char*, UnlearnMode>> kUnlearnModes = {
    {"commit_inner", UnlearnMode::kCommitInner}, {"evaluate_only", UnlearnMode::kEvaluateOnly}};
const std::vector<std::pair<const char*, CorrelationPairing>> kPairings = {
    {"by_index", CorrelationPairing::kByIndex}, {"all_pairs", CorrelationPairing::kAllPairs}};
const std::vector<std::pair<const char*, ProjectionKind>> kProjections = {
    {"gaussian", ProjectionKind::kGaussian}, {"orthogonal", ProjectionKind::kOrthogonal}};

template <class E>
const char* name_of(E value, const std::vector<std::pair<const char*, E>>& options) {
  for (const auto& [name, v] : options) {
    if (v == value) return name;
  }
  return "?";
}

auto positive = [](double x) { return x > 0.0; };
auto non_negative = [](double x) { return x >= 0.0; };

TrainConfig read_train(Reader& r, const json& obj, const std::string& prefix, TrainConfig def) {
  r.allow_keys(obj, prefix, {"epochs", "batch_size", "learning_rate", "seed", "shuffle"});
  TrainConfig t;
  t.epochs = r.int_value(obj, prefix, "epochs", def.epochs, 0);
  t.batch_size = r.int_value(obj, prefix, "batch_size", def.batch_size, 1);
  t.learning_rate = r.real(obj, prefix, "learning_rate", def.learning_rate, non_negative, ">= 0");
  t.seed = r.seed(obj, prefix, "seed", def.seed);
  t.shuffle = r.boolean(obj, prefix, "shuffle", def.shuffle);
  return t;
}

bool file_missing(const RunConfig& c, const std::string& p) {
  const fs::path path(p);
  return !fs::exists(path.is_absolute() ? path : c.base_dir / path);
}

// Number of original / hijack classes when known before loading any file.
std::optional<int> known_n(const RunConfig& c) {
  if (c.dataset.kind == DatasetKind::kDualBlobs) return c.dataset.blobs.n_orig;
  return std::nullopt;
}

std::optional<int> known_m(const RunConfig& c) {
  if (c.dataset.kind == DatasetKind::kDualBlobs) return c.dataset.blobs.m_hijack;
  return std::nullopt;
}

void parse_dataset(Reader& r, const json& doc, RunConfig& c) {
  const std::string p = "dataset";
  const json& d = r.section(doc, "dataset", p);
  r.allow_keys(d, p, {"kind", "n_orig", "m_hijack", "dim", "n_per_cell", "orig_sep", "hijack_sep",
                      "noise_sigma", "seed", "directions", "path", "test_path", "images", "labels",
                      "hijack_labels", "split"});
  auto& ds = c.dataset;
  ds.kind = r.choice(d, p, "kind", DatasetKind::kDualBlobs, kDatasetKinds);
  auto& b = ds.blobs;
  b.n_orig = r.int_value(d, p, "n_orig", 4, 2);
  b.m_hijack = r.int_value(d, p, "m_hijack", 8, 2);
  b.dim = r.int_value(d, p, "dim", 8, 2);
  b.n_per_cell = r.int_value(d, p, "n_per_cell", 12, 1);
  b.orig_sep = r.real(d, p, "orig_sep", 4.0, non_negative, ">= 0");
  b.hijack_sep = r.real(d, p, "hijack_sep", 4.0, non_negative, ">= 0");
  b.noise_sigma = r.real(d, p, "noise_sigma", 0.3, non_negative, ">= 0");
  b.seed = r.seed(d, p, "seed", derive_seed(c.seed, kTagDataset));
  b.directions = r.choice(d, p, "directions", DirectionMode::kRandom, kDirections);
  ds.path = r.string(d, p, "path", "");
  ds.test_path = r.string(d, p, "test_path", "");
  ds.images = r.string(d, p, "images", "");
  ds.labels = r.string(d, p, "labels", "");
  ds.hijack_labels = r.string(d, p, "hijack_labels", "");

  const std::string sp = "dataset.split";
  const json& s = r.section(d, "split", sp);
  r.allow_keys(s, sp, {"train_fraction", "seed", "stratify_by"});
  ds.split.train_fraction =
      r.real(s, sp, "train_fraction", 0.5, [](double x) { return x > 0.0 && x < 1.0; }, "in (0, 1)");
  ds.split.seed = r.seed(s, sp, "seed", derive_seed(c.seed, kTagSplit));
  ds.split.stratify_by = r.choice(s, sp, "stratify_by", Stratify::kOriginal, kStratify);

  auto need_file = [&](const char* key, const std::string& value) {
    if (value.empty()) {
      r.issue(join_path(p, key), "required for dataset kind '" +
                                     std::string(name_of(ds.kind, kDatasetKinds)) + "'");
    } else if (file_missing(c, value)) {
      r.issue(join_path(p, key), "file not found: " + value);
    }
  };
  if (ds.kind == DatasetKind::kCsv) {
    need_file("path", ds.path);
    if (!ds.test_path.empty()) need_file("test_path", ds.test_path);
  } else if (ds.kind == DatasetKind::kIdx) {
    need_file("images", ds.images);
    need_file("labels", ds.labels);
    if (!ds.hijack_labels.empty()) need_file("hijack_labels", ds.hijack_labels);
  }
}

void parse_model(Reader& r, const json& doc, RunConfig& c) {
  const std::string p = "model";
  const json& m = r.section(doc, "model", p);
  r.allow_keys(m, p, {"hidden_widths", "activation", "width_expansion", "init", "init_sigma", "seed"});
  auto& mc = c.model;
  mc.hidden_widths = r.int_list(m, p, "hidden_widths", {32, 32}, 1, true);
  mc.activation = r.choice(m, p, "activation", Activation::kRelu, kActivations);
  mc.width_expansion = r.real(m, p, "width_expansion", 1.0, positive, "> 0");
  mc.init.kind = r.choice(m, p, "init", InitKind::kHe, kInits);
  mc.init.sigma = r.real(m, p, "init_sigma", 1.0, positive, "> 0");
  mc.seed = r.seed(m, p, "seed", derive_seed(c.seed, kTagModel));
}

void parse_attack(Reader& r, const json& doc, RunConfig& c) {
  const std::string p = "attack";
  const json& a = r.section(doc, "attack", p);
  r.allow_keys(a, p, {"source", "metric", "n_max", "samples_per_class", "seed"});
  auto& ac = c.attack;
  ac.source = r.string(a, p, "source", "last_hidden");
  if (ac.source != "last_hidden") {
    try {
      const auto src = BekSource::parse(ac.source);
      const auto depth = static_cast<int>(c.model.hidden_widths.size()) + 1;
      if (!src.is_logits() && src.layer_index() >= depth) {
        r.issue(join_path(p, "source"), "layer " + std::to_string(src.layer_index()) +
                                            " out of range for a " + std::to_string(depth) +
                                            "-layer model");
      }
    } catch (const Error& e) {
      r.issue(join_path(p, "source"), e.what());
      ac.source = "last_hidden";
    }
  }
  ac.metric = r.choice(a, p, "metric", Metric::kL2, kMetrics);
  ac.n_max = r.int_value(a, p, "n_max", 1, 1);
  if (const auto m = known_m(c); m && ac.n_max > *m) {
    r.issue(join_path(p, "n_max"), "exceeds the " + std::to_string(*m) + " hijack classes");
  }
  ac.samples_per_class = r.int_value(a, p, "samples_per_class", 1, 1);
  ac.seed = r.seed(a, p, "seed", derive_seed(c.seed, kTagAttack));
}

StudyParams parse_study(Reader& r, const json& doc, const RunConfig& c) {
  const std::string p = "study";
  if (!doc.contains("study")) {
    r.issue(p, "missing; exactly one study must be selected");
    return AttackStudy{};
  }
  const json& s = r.section(doc, "study", p);
  if (!s.contains("type")) {
    r.issue(join_path(p, "type"), "missing");
    return AttackStudy{};
  }
  const std::string type = r.string(s, p, "type", "");
  const std::string pp = "study.params";
  const json& q = r.section(s, "params", pp);
  r.allow_keys(s, p, {"type", "params"});
  const int hidden = static_cast<int>(c.model.hidden_widths.size());
  const auto n_known = known_n(c);
  const auto m_known = known_m(c);
  const std::uint64_t study_seed = derive_seed(c.seed, kTagStudy);

  if (type == "attack") {
    r.allow_keys(q, pp, {"trained"});
    AttackStudy a;
    a.trained = r.boolean(q, pp, "trained", true);
    return a;
  }
  if (type == "unlearn") {
    r.allow_keys(q, pp, {"alpha", "beta", "mode", "head_learning_rate", "tap_layer", "surrogate"});
    UnlearnStudy u;
    u.unlearn.alpha = r.real(q, pp, "alpha", 1.0, positive, "> 0");
    u.unlearn.beta = r.real(q, pp, "beta", 0.01, non_negative, ">= 0");
    u.unlearn.mode = r.choice(q, pp, "mode", UnlearnMode::kCommitInner, kUnlearnModes);
    u.unlearn.head_learning_rate =
        r.real(q, pp, "head_learning_rate", 0.1, non_negative, ">= 0");
    if (hidden == 0) r.issue("model.hidden_widths", "unlearn study needs at least one hidden layer");
    u.unlearn.tap_layer = r.int_value(q, pp, "tap_layer", std::max(hidden - 1, 0), 0,
                                      std::max(hidden - 1, 0));
    const std::string sp = "study.params.surrogate";
    u.surrogate = read_train(r, r.section(q, "surrogate", sp), sp,
                             {100, 16, 0.05, derive_seed(c.seed, kTagSurrogate), true});
    return u;
  }
  if (type == "compress") {
    r.allow_keys(q, pp, {"grid", "selector", "w_loss", "w_params", "alpha", "beta"});
    CompressStudy cs;
    cs.grid = r.positive_list(q, pp, "grid", default_compression_grid());
    cs.selector = r.string(q, pp, "selector", "topsis");
    cs.topsis.w_loss = r.real(q, pp, "w_loss", 0.5, positive, "> 0");
    cs.topsis.w_params = r.real(q, pp, "w_params", 0.5, positive, "> 0");
    cs.alpha = r.optional_real(q, pp, "alpha", non_negative, ">= 0");
    cs.beta = r.optional_real(q, pp, "beta", non_negative, ">= 0");
    if (cs.selector == "scalarized") {
      if (!cs.alpha) r.issue(join_path(pp, "alpha"), "required by the scalarized selector");
      if (!cs.beta) r.issue(join_path(pp, "beta"), "required by the scalarized selector");
    } else if (cs.selector != "topsis") {
      r.issue(join_path(pp, "selector"), "unknown value '" + cs.selector +
                                             "' (expected topsis | scalarized)");
    }
    return cs;
  }
  if (type == "ratio_sweep") {
    r.allow_keys(q, pp, {"n_values", "m_values", "seed"});
    RatioSweepStudy rs;
    rs.n_values = r.int_list(q, pp, "n_values", {2, 3, 4}, 2);
    rs.m_values = r.int_list(q, pp, "m_values", {3, 5, 8}, 2);
    rs.seed = r.seed(q, pp, "seed", study_seed);
    auto bound = [&](const char* key, const std::vector<int>& values, std::optional<int> avail,
                     const char* what) {
      if (!avail) return;
      for (int v : values) {
        if (v > *avail) {
          r.issue(join_path(pp, key), "subset of " + std::to_string(v) + " " + what +
                                          " classes, but only " + std::to_string(*avail) +
                                          " available");
          return;
        }
      }
    };
    bound("n_values", rs.n_values, n_known, "original");
    bound("m_values", rs.m_values, m_known, "hijack");
    return rs;
  }
  if (type == "width_sweep") {
    r.allow_keys(q, pp, {"expansions"});
    WidthSweepStudy ws;
    ws.expansions = r.positive_list(q, pp, "expansions", default_width_expansions());
    return ws;
  }
  if (type == "correlation") {
    r.allow_keys(q, pp, {"layer", "pairing", "task_b", "model_b_seed"});
    CorrelationStudy cs;
    cs.task_b = r.string(q, pp, "task_b", "hijack");
    if (cs.task_b != "hijack" && cs.task_b != "original") {
      r.issue(join_path(pp, "task_b"), "unknown value '" + cs.task_b + "' (expected hijack | original)");
    }
    // With a hijack-task B the output layers differ, so only hidden layers compare.
    const int max_layer = cs.task_b == "hijack" ? hidden - 1 : hidden;
    if (max_layer < 0) {
      r.issue("model.hidden_widths", "correlation against the hijack task needs a hidden layer");
    } else {
      cs.layer = r.int_value(q, pp, "layer", std::max(hidden - 1, 0), 0, max_layer);
    }
    cs.pairing = r.choice(q, pp, "pairing", CorrelationPairing::kByIndex, kPairings);
    cs.model_b_seed = r.seed(q, pp, "model_b_seed", c.model.seed);
    return cs;
  }
  if (type == "logit_truncation") {
    r.allow_keys(q, pp, {"ks", "trained"});
    LogitTruncationStudy ls;
    std::vector<int> def;
    if (n_known) {
      def.resize(static_cast<std::size_t>(*n_known));
      std::iota(def.begin(), def.end(), 1);
    }
    ls.ks = r.int_list(q, pp, "ks", def, 1, !n_known);
    if (n_known) {
      for (int k : ls.ks) {
        if (k > *n_known) {
          r.issue(join_path(pp, "ks"), "k = " + std::to_string(k) + " exceeds the " +
                                           std::to_string(*n_known) + " logits");
          break;
        }
      }
    }
    ls.trained = r.boolean(q, pp, "trained", true);
    return ls;
  }
  if (type == "jl_check") {
    r.allow_keys(q, pp, {"dims_in", "dims_out", "n_points", "n_trials", "kind", "seed"});
    JlCheckStudy js;
    js.dims_in = r.int_value(q, pp, "dims_in", 64, 2);
    js.dims_out = r.int_value(q, pp, "dims_out", 32, 2);
    js.n_points = r.int_value(q, pp, "n_points", 20, 2);
    js.n_trials = r.int_value(q, pp, "n_trials", 10, 1);
    js.kind = r.choice(q, pp, "kind", ProjectionKind::kGaussian, kProjections);
    js.seed = r.seed(q, pp, "seed", study_seed);
    if (js.kind == ProjectionKind::kOrthogonal && js.dims_in != js.dims_out) {
      r.issue(join_path(pp, "dims_out"), "orthogonal projection needs dims_out == dims_in");
    }
    return js;
  }
  r.issue(join_path(p, "type"),
          "unknown study '" + type +
              "' (expected attack | unlearn | compress | ratio_sweep | width_sweep | correlation | "
              "logit_truncation | jl_check)");
  return AttackStudy{};
}

}  // namespace

RunConfig parse_config(const json& doc, const fs::path& base_dir) {
  std::vector<ConfigIssue> issues;
  Reader r(issues);
  RunConfig c;
  c.base_dir = base_dir;
  if (!doc.is_object()) {
    r.issue("", "config must be a JSON object");
    throw ConfigError(std::move(issues));
  }
  r.allow_keys(doc, "", {"seed", "output_dir", "dataset", "model", "train", "attack", "study"});
  c.seed = r.seed(doc, "", "seed", 0);
  c.output_dir = r.string(doc, "", "output_dir", "out");
  if (c.output_dir.empty()) r.issue("output_dir", "must not be empty");
  parse_dataset(r, doc, c);
  parse_model(r, doc, c);
  c.train = read_train(r, r.section(doc, "train", "train"), "train",
                       {50, 16, 0.05, derive_seed(c.seed, kTagTrain), true});
  parse_attack(r, doc, c);
  c.study = parse_study(r, doc, c);
  if (!issues.empty()) throw ConfigError(std::move(issues));
  return c;
}

RunConfig load_config(const fs::path& path) {
  const json doc = read_json_file(path);
  return parse_config(doc, path.parent_path());
}

json to_json(const RunConfig& c) {
  json j;
  j["seed"] = c.seed;
  j["output_dir"] = c.output_dir;

  const auto& ds = c.dataset;
  json d;
  d["kind"] = name_of(ds.kind, kDatasetKinds);
  if (ds.kind == DatasetKind::kDualBlobs) {
    const auto& b = ds.blobs;
    d["n_orig"] = b.n_orig;
    d["m_hijack"] = b.m_hijack;
    d["dim"] = b.dim;
    d["n_per_cell"] = b.n_per_cell;
    d["orig_sep"] = b.orig_sep;
    d["hijack_sep"] = b.hijack_sep;
    d["noise_sigma"] = b.noise_sigma;
    d["seed"] = b.seed;
    d["directions"] = name_of(b.directions, kDirections);
  } else if (ds.kind == DatasetKind::kCsv) {
    d["path"] = ds.path;
    if (!ds.test_path.empty()) d["test_path"] = ds.test_path;
  } else {
    d["images"] = ds.images;
    d["labels"] = ds.labels;
    if (!ds.hijack_labels.empty()) d["hijack_labels"] = ds.hijack_labels;
  }
  d["split"] = {{"train_fraction", ds.split.train_fraction},
                {"seed", ds.split.seed},
                {"stratify_by", name_of(ds.split.stratify_by, kStratify)}};
  j["dataset"] = d;

  const auto& m = c.model;
  j["model"] = {{"hidden_widths", m.hidden_widths},
                {"activation", name_of(m.activation, kActivations)},
                {"width_expansion", m.width_expansion},
                {"init", name_of(m.init.kind, kInits)},
                {"init_sigma", m.init.sigma},
                {"seed", m.seed}};
  auto train_json = [](const TrainConfig& t) {
    return json{{"epochs", t.epochs},
                {"batch_size", t.batch_size},
                {"learning_rate", t.learning_rate},
                {"seed", t.seed},
                {"shuffle", t.shuffle}};
  };
  j["train"] = train_json(c.train);
  j["attack"] = {{"source", c.attack.source},
                 {"metric", to_string(c.attack.metric)},
                 {"n_max", c.attack.n_max},
                 {"samples_per_class", c.attack.samples_per_class},
                 {"seed", c.attack.seed}};

  json params = json::object();
  std::visit(
      [&](const auto& s) {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, AttackStudy>) {
          params["trained"] = s.trained;
        } else if constexpr (std::is_same_v<T, UnlearnStudy>) {
          params["alpha"] = s.unlearn.alpha;
          params["beta"] = s.unlearn.beta;
          params["mode"] = name_of(s.unlearn.mode, kUnlearnModes);
          params["head_learning_rate"] = s.unlearn.head_learning_rate;
          params["tap_layer"] = s.unlearn.tap_layer.value_or(0);
          params["surrogate"] = train_json(s.surrogate);
        } else if constexpr (std::is_same_v<T, CompressStudy>) {
          params["grid"] = s.grid;
          params["selector"] = s.selector;
          params["w_loss"] = s.topsis.w_loss;
          params["w_params"] = s.topsis.w_params;
          if (s.alpha) params["alpha"] = *s.alpha;
          if (s.beta) params["beta"] = *s.beta;
        } else if constexpr (std::is_same_v<T, RatioSweepStudy>) {
          params["n_values"] = s.n_values;
          params["m_values"] = s.m_values;
          params["seed"] = s.seed;
        } else if constexpr (std::is_same_v<T, WidthSweepStudy>) {
          params["expansions"] = s.expansions;
        } else if constexpr (std::is_same_v<T, CorrelationStudy>) {
          params["layer"] = s.layer;
          params["pairing"] = to_string(s.pairing);
          params["task_b"] = s.task_b;
          params["model_b_seed"] = s.model_b_seed;
        } else if constexpr (std::is_same_v<T, LogitTruncationStudy>) {
          params["ks"] = s.ks;
          params["trained"] = s.trained;
        } else {
          params["dims_in"] = s.dims_in;
          params["dims_out"] = s.dims_out;
          params["n_points"] = s.n_points;
          params["n_trials"] = s.n_trials;
          params["kind"] = name_of(s.kind, kProjections);
          params["seed"] = s.seed;
        }
      },
      c.study);
  j["study"] = {{"type", study_name(c.study)}, {"params", params}};
  return j;
}

// ---------------------------------------------------------------------------
// Running studies

namespace {

fs::path resolve(const RunConfig& c, const std::string& p) {
  const fs::path path(p);
  return path.is_absolute() ? path : c.base_dir / path;
}

struct Data {
  LabeledDataset train;
  LabeledDataset test;
};

LabeledDataset attach_hijack_labels(const LabeledDataset& ds, const LabeledDataset& hijack) {
  if (hijack.size() != ds.size()) fail(ErrorCode::kFormat, "hijack label file has a different sample count");
  std::vector<Sample> samples = ds.samples();
  for (std::size_t i = 0; i < samples.size(); ++i) samples[i].hijack_label = hijack[i].original_label;
  return LabeledDataset(ds.name(), std::move(samples), ds.n_classes_original(),
                        hijack.n_classes_original());
}

Data load_data(const RunConfig& c) {
  const auto& ds = c.dataset;
  switch (ds.kind) {
    case DatasetKind::kDualBlobs: {
      auto [tr, te] = split(generate_dual_blobs(ds.blobs), ds.split);
      return {std::move(tr), std::move(te)};
    }
    case DatasetKind::kCsv: {
      auto full = load_csv(resolve(c, ds.path), true);
      if (ds.test_path.empty()) {
        auto [tr, te] = split(full, ds.split);
        return {std::move(tr), std::move(te)};
      }
      CsvOptions opt;
      opt.n_classes_original = full.n_classes_original();
      opt.n_classes_hijack = full.n_classes_hijack();
      auto test = load_csv(resolve(c, ds.test_path), true, opt);
      if (test.feature_dim() != full.feature_dim()) {
        fail(ErrorCode::kShape, "train and test CSV files differ in feature count");
      }
      return {std::move(full), std::move(test)};
    }
    case DatasetKind::kIdx: {
      auto full = load_idx_images(resolve(c, ds.images), resolve(c, ds.labels));
      if (!ds.hijack_labels.empty()) {
        full = attach_hijack_labels(full, load_idx_images(resolve(c, ds.images),
                                                          resolve(c, ds.hijack_labels)));
      }
      auto [tr, te] = split(full, ds.split);
      return {std::move(tr), std::move(te)};
    }
  }
  fail(ErrorCode::kConfig, "unknown dataset kind");
}

void require_hijack(const LabeledDataset& ds) {
  if (!ds.has_hijack_labels()) fail(ErrorCode::kConfig, "this study needs hijack labels in the dataset");
}

NetworkSpec model_spec(const RunConfig& c, std::size_t input_dim, int n_out) {
  NetworkSpec spec;
  spec.layer_widths.push_back(static_cast<int>(input_dim));
  for (int h : c.model.hidden_widths) spec.layer_widths.push_back(h);
  spec.layer_widths.push_back(n_out);
  spec.activation = c.model.activation;
  spec.width_expansion = c.model.width_expansion;
  spec.init = c.model.init;
  spec.seed = c.model.seed;
  return spec;
}

AttackSettings attack_settings(const RunConfig& c) {
  AttackSettings a;
  if (c.attack.source != "last_hidden") a.source = BekSource::parse(c.attack.source);
  a.metric = c.attack.metric;
  a.samples_per_class = c.attack.samples_per_class;
  a.seed = c.attack.seed;
  return a;
}

SweepConfig sweep_config(const RunConfig& c, std::uint64_t seed = 0) {
  return {c.train, attack_settings(c), seed};
}

json number_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

json train_json(const TrainReport& t) {
  return {{"loss_curve", t.loss_curve},
          {"train_accuracy", t.train_accuracy},
          {"test_accuracy", t.test_accuracy ? json(*t.test_accuracy) : json(nullptr)},
          {"wall_clock_s", t.wall_clock_s}};
}

json attack_json(const AttackReport& a, std::size_t n_references) {
  return {{"top_n", a.top_n},
          {"lower_bound", a.lower_bound},
          {"metric", to_string(a.metric)},
          {"source", a.source.to_string()},
          {"m", a.m},
          {"num_queries", a.num_queries},
          {"num_references", n_references},
          {"zero_vector_cosines", a.zero_vector_cosines}};
}

json curve_json(const SweepCurve& curve) {
  json points = json::array();
  for (const auto& p : curve.points) {
    json metrics = json::object();
    for (const auto& [k, v] : p.metrics) metrics[k] = number_or_null(v);
    points.push_back({{"x", p.x}, {"metrics", metrics}});
  }
  return {{"axis", curve.axis}, {"points", points}, {"seeds", curve.seeds}};
}

std::vector<double> metric_series(const SweepCurve& curve, const std::string& name) {
  std::vector<double> out;
  for (const auto& p : curve.points) out.push_back(p.metrics.at(name));
  return out;
}

using Exports = std::optional<fs::path>;

json base_seeds(const RunConfig& c) {
  json s = {{"seed", c.seed}, {"model", c.model.seed}, {"train", c.train.seed},
            {"attack", c.attack.seed}, {"split", c.dataset.split.seed}};
  if (c.dataset.kind == DatasetKind::kDualBlobs) s["dataset"] = c.dataset.blobs.seed;
  return s;
}

std::pair<Network, std::optional<TrainReport>> fit_model(const RunConfig& c, const Data& data,
                                                          bool trained) {
  auto net = build(model_spec(c, data.train.feature_dim(), data.train.n_classes_original()));
  if (!trained) return {std::move(net), std::nullopt};
  auto [fitted, report] = train(std::move(net), data.train, c.train, &data.test);
  return {std::move(fitted), std::move(report)};
}

json run_attack_study(const RunConfig& c, const AttackStudy& s, const Exports& out) {
  const auto data = load_data(c);
  require_hijack(data.test);
  const auto [net, report] = fit_model(c, data, s.trained);
  const auto settings = attack_settings(c);
  const auto source = resolve_source(net, settings);
  const auto refs = build_reference_db_from(data.test, c.attack.samples_per_class, c.attack.seed);
  const auto attack = run_attack(net, source, refs.references, refs.queries, c.attack.metric,
                                 c.attack.n_max, c.attack.seed);
  const auto logits = run_attack(net, BekSource::logits(), refs.references, refs.queries,
                                 c.attack.metric, c.attack.n_max, c.attack.seed);
  json payload;
  payload["attack"] = attack_json(attack, refs.references.size());
  payload["logits_attack"] = attack_json(logits, refs.references.size());
  payload["model"] = {{"trained", s.trained},
                      {"widths", net.widths()},
                      {"params", param_count(net)},
                      {"original_accuracy", original_accuracy(net, data.test)}};
  payload["train"] = report ? train_json(*report) : json(nullptr);
  if (out) {
    save_network(net, *out / "model.snml");
    export_features(net, data.test, source.layer_index(), *out / "bek_test.csv");
  }
  return payload;
}

json run_unlearn_study(const RunConfig& c, const UnlearnStudy& s) {
  const auto data = load_data(c);
  require_hijack(data.train);
  require_hijack(data.test);
  const auto spec = model_spec(c, data.train.feature_dim(), data.train.n_classes_original());
  auto [base, base_report] = train(build(spec), data.train, c.train, &data.test);
  auto [unl, unl_report] = meta_unlearn_train(build(spec), data.train, c.train, s.unlearn, &data.test);
  const auto tap = BekSource::layer(*s.unlearn.tap_layer);
  const auto refs = build_reference_db_from(data.test, c.attack.samples_per_class, c.attack.seed);
  const auto settings = attack_settings(c);

  auto row = [&](const char* name, const Network& net, const TrainReport& rep) {
    const double surrogate = surrogate_hijack_accuracy(net, tap, data.train.samples(),
                                                       data.test.samples(), s.surrogate);
    const auto snatch = run_attack(net, resolve_source(net, settings), refs.references,
                                   refs.queries, c.attack.metric, 1, c.attack.seed);
    return json{{"model", name},
                {"original_acc", *rep.test_accuracy},
                {"surrogate_hijack_acc", surrogate},
                {"snatch_top1", snatch.top_n.front()},
                {"train", train_json(rep)}};
  };
  json rows = json::array({row("baseline", base, base_report), row("meta_unlearned", unl, unl_report)});
  json payload;
  payload["rows"] = rows;
  payload["tap_layer"] = *s.unlearn.tap_layer;
  payload["original_acc_drop"] =
      rows[0]["original_acc"].get<double>() - rows[1]["original_acc"].get<double>();
  payload["surrogate_drop"] =
      rows[0]["surrogate_hijack_acc"].get<double>() - rows[1]["surrogate_hijack_acc"].get<double>();
  return payload;
}

json run_compress_study(const RunConfig& c, const CompressStudy& s) {
  const auto data = load_data(c);
  require_hijack(data.test);
  const auto spec = model_spec(c, data.train.feature_dim(), data.train.n_classes_original());
  const auto cfg = sweep_config(c);
  auto candidates = enumerate_candidates(spec, s.grid, data.train, data.test, cfg, &data.test);

  std::size_t chosen = 0;
  if (s.selector == "topsis") {
    const auto result = topsis_select(candidates, s.topsis);
    chosen = result.index;
    for (std::size_t i = 0; i < candidates.size(); ++i) candidates[i].closeness = result.closeness[i];
  } else {
    chosen = scalarized_select(candidates, *s.alpha, *s.beta);
    for (auto& cand : candidates) cand.closeness = std::numeric_limits<double>::quiet_NaN();
  }
  candidates[chosen].selected = true;

  json table = json::array();
  for (const auto& cand : candidates) {
    json row = {{"expansion", cand.expansion},
                {"valid", cand.valid},
                {"params", cand.params},
                {"closeness", number_or_null(cand.closeness)},
                {"selected", cand.selected}};
    if (cand.valid) {
      row["loss"] = cand.loss;
      row["original_acc"] = cand.original_acc;
      row["hijack_top1_logits"] = cand.hijack_top1_logits;
      row["hijack_top1_fv"] = cand.hijack_top1_fv;
    } else {
      row["loss"] = nullptr;
      row["original_acc"] = nullptr;
      row["hijack_top1_logits"] = nullptr;
      row["hijack_top1_fv"] = nullptr;
      row["failure"] = cand.failure;
    }
    table.push_back(row);
  }
  const auto base = train(build(spec), data.train, c.train).first;
  const auto cmp = compression_report(base, *candidates[chosen].net, candidates[chosen].expansion,
                                      data.test, data.test, cfg.attack);
  json payload;
  payload["candidates"] = table;
  payload["selected_index"] = chosen;
  payload["selector"] = s.selector;
  payload["comparison"] = {{"expansion", cmp.expansion},
                           {"params_base", cmp.params_base},
                           {"params_cmp", cmp.params_cmp},
                           {"original_acc_base", cmp.original_acc_base},
                           {"original_acc_cmp", cmp.original_acc_cmp},
                           {"hijack_logits_base", cmp.hijack_logits_base},
                           {"hijack_logits_cmp", cmp.hijack_logits_cmp},
                           {"hijack_fv_base", cmp.hijack_fv_base},
                           {"hijack_fv_cmp", cmp.hijack_fv_cmp}};
  return payload;
}

json run_ratio_study(const RunConfig& c, const RatioSweepStudy& s) {
  const auto data = load_data(c);
  require_hijack(data.test);
  const auto spec = model_spec(c, data.train.feature_dim(), data.train.n_classes_original());
  const auto curve = complexity_ratio_sweep(spec, data.train, data.test, s.n_values, s.m_values,
                                            sweep_config(c, s.seed));
  const auto r = metric_series(curve, "r");
  const auto top1 = metric_series(curve, "top1");
  return {{"curve", curve_json(curve)}, {"spearman_r_top1", number_or_null(spearman(r, top1))}};
}

json run_width_study(const RunConfig& c, const WidthSweepStudy& s) {
  const auto data = load_data(c);
  require_hijack(data.test);
  const auto spec = model_spec(c, data.train.feature_dim(), data.train.n_classes_original());
  const auto curve = overparam_sweep(spec, s.expansions, data.train, data.test, sweep_config(c));
  std::vector<double> x;
  for (const auto& p : curve.points) x.push_back(p.x);
  const auto top1 = metric_series(curve, "top1");
  return {{"curve", curve_json(curve)},
          {"spearman_expansion_top1", number_or_null(spearman(x, top1))}};
}

LabeledDataset as_hijack_task(const LabeledDataset& ds) {
  require_hijack(ds);
  std::vector<Sample> samples = ds.samples();
  for (auto& s : samples) s.original_label = *s.hijack_label;
  return LabeledDataset(ds.name() + "/hijack-task", std::move(samples), ds.n_classes_hijack(),
                        ds.n_classes_hijack());
}

json run_correlation_study(const RunConfig& c, const CorrelationStudy& s) {
  const auto data = load_data(c);
  const auto net_a = fit_model(c, data, true).first;
  const auto task_b = s.task_b == "hijack" ? as_hijack_task(data.train) : data.train;
  auto spec_b = model_spec(c, task_b.feature_dim(), task_b.n_classes_original());
  spec_b.seed = s.model_b_seed;
  const auto net_b = train(build(spec_b), task_b, c.train).first;
  const auto rep = correlation_distribution(net_a, net_b, s.layer, data.test, s.pairing);
  return {{"layer", rep.layer},
          {"pairing", to_string(rep.pairing)},
          {"values", rep.values},
          {"excluded_pairs", rep.excluded_pairs},
          {"mean", number_or_null(rep.mean)},
          {"median", number_or_null(rep.median)},
          {"fraction_positive", rep.fraction_positive}};
}

json run_truncation_study(const RunConfig& c, const LogitTruncationStudy& s) {
  const auto data = load_data(c);
  require_hijack(data.test);
  const auto net = fit_model(c, data, s.trained).first;
  const auto refs = build_reference_db_from(data.test, c.attack.samples_per_class, c.attack.seed);
  auto ks = s.ks;
  if (ks.empty()) {
    ks.resize(net.output_dim());
    std::iota(ks.begin(), ks.end(), 1);
  }
  const auto curve = logit_truncation_curve(net, refs.references, refs.queries, c.attack.metric, ks);
  const auto full = run_attack(net, BekSource::logits(), refs.references, refs.queries,
                               c.attack.metric, 1, c.attack.seed);
  return {{"curve", curve_json(curve)},
          {"untruncated_top1", full.top_n.front()},
          {"n", net.output_dim()},
          {"trained", s.trained}};
}

json run_jl_study(const JlCheckStudy& s) {
  const auto st = random_projection_check(s.dims_in, s.dims_out, s.n_points, s.n_trials, s.seed, s.kind);
  return {{"max_distortions", st.max_distortions},
          {"median_max_distortion", st.median_max_distortion},
          {"mean_max_distortion", st.mean_max_distortion},
          {"relu_ratio_mean", st.relu_ratio_mean},
          {"relu_ratio_median", st.relu_ratio_median},
          {"relu_ratio_min", st.relu_ratio_min},
          {"relu_ratio_max", st.relu_ratio_max}};
}

}  // namespace

json run_study(const RunConfig& c, const std::optional<fs::path>& export_dir) {
  const auto start = std::chrono::steady_clock::now();
  json seeds = base_seeds(c);
  json payload = std::visit(
      [&](const auto& s) -> json {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, AttackStudy>) {
          return run_attack_study(c, s, export_dir);
        } else if constexpr (std::is_same_v<T, UnlearnStudy>) {
          seeds["surrogate"] = s.surrogate.seed;
          return run_unlearn_study(c, s);
        } else if constexpr (std::is_same_v<T, CompressStudy>) {
          return run_compress_study(c, s);
        } else if constexpr (std::is_same_v<T, RatioSweepStudy>) {
          seeds["subsets"] = s.seed;
          return run_ratio_study(c, s);
        } else if constexpr (std::is_same_v<T, WidthSweepStudy>) {
          return run_width_study(c, s);
        } else if constexpr (std::is_same_v<T, CorrelationStudy>) {
          seeds["model_b"] = s.model_b_seed;
          return run_correlation_study(c, s);
        } else if constexpr (std::is_same_v<T, LogitTruncationStudy>) {
          return run_truncation_study(c, s);
        } else {
          seeds = {{"seed", c.seed}, {"projection", s.seed}};
          return run_jl_study(s);
        }
      },
      c.study);
  const double elapsed =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return {{"version", kReportVersion},
          {"study", study_name(c.study)},
          {"config", to_json(c)},
          {"payload", payload},
          {"seeds", seeds},
          {"wall_clock_s", elapsed}};
}

fs::path resolve_output_dir(const RunConfig& c) { return resolve(c, c.output_dir); }

fs::path run(const RunConfig& c) {
  const auto dir = resolve_output_dir(c);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) fail(ErrorCode::kIo, "cannot create output directory " + dir.string() + ": " + ec.message());
  const auto report = run_study(c, dir);
  const auto path = dir / "report.json";
  write_json_file(report, path);
  return path;
}

}  // namespace snatchml
