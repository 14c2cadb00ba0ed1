#include "snatchml/hijack.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <numeric>

#include "snatchml/error.hpp"

namespace snatchml {

std::string BekSource::to_string() const {
  return is_logits() ? "logits" : "layer:" + std::to_string(layer_);
}

BekSource BekSource::parse(const std::string& text) {
  if (text == "logits") return logits();
  constexpr std::string_view prefix = "layer:";
  if (text.rfind(prefix, 0) == 0) {
    int k = -1;
    const char* begin = text.data() + prefix.size();
    const char* end = text.data() + text.size();
    const auto [ptr, ec] = std::from_chars(begin, end, k);
    if (ec == std::errc() && ptr == end && begin != end && k >= 0) return layer(k);
  }
  fail(ErrorCode::kConfig, "unknown BEK source '" + text + "' (expected logits or layer:<k>)");
}

const char* to_string(Metric metric) {
  return metric == Metric::kL2 ? "l2" : "cosine";
}

Metric parse_metric(const std::string& text) {
  if (text == "l2") return Metric::kL2;
  if (text == "cosine") return Metric::kCosine;
  fail(ErrorCode::kConfig, "unknown metric '" + text + "' (expected l2 or cosine)");
}

BekVector extract_bek(const Network& net, std::span<const double> x, BekSource source,
                      std::size_t sample_id) {
  if (!source.is_logits() &&
      static_cast<std::size_t>(source.layer_index()) >= net.layer_count()) {
    fail(ErrorCode::kIndex, "BEK layer " + std::to_string(source.layer_index()) +
                                " out of range for a " + std::to_string(net.layer_count()) +
                                "-layer network");
  }
  BekVector bek;
  bek.values = tap(forward(net, x), source.layer_index());
  bek.source = source;
  bek.sample_id = sample_id;
  return bek;
}

double distance(std::span<const double> a, std::span<const double> b, Metric metric,
                DistanceDiagnostics* diag) {
  if (a.size() != b.size()) {
    fail(ErrorCode::kShape, "distance between vectors of length " + std::to_string(a.size()) +
                                " and " + std::to_string(b.size()));
  }
  if (metric == Metric::kL2) {
    double sum = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) sum += (a[i] - b[i]) * (a[i] - b[i]);
    return std::sqrt(sum);
  }
  double dot = 0.0;
  double na = 0.0;
  double nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) {
    if (diag) ++diag->zero_vector_cosines;
    return 2.0;
  }
  return 1.0 - dot / (std::sqrt(na) * std::sqrt(nb));
}

ReferenceDb::ReferenceDb(std::vector<std::pair<BekVector, int>> entries, int m)
    : entries_(std::move(entries)), m_(m), source_(BekSource::logits()) {
  if (m_ < 1) fail(ErrorCode::kParameter, "reference db needs m >= 1");
  if (entries_.empty()) fail(ErrorCode::kCoverage, "reference db is empty");
  source_ = entries_.front().first.source;
  const std::size_t len = entries_.front().first.values.size();
  std::vector<int> per_class(static_cast<std::size_t>(m_), 0);
  for (const auto& [bek, label] : entries_) {
    if (label < 0 || label >= m_) {
      fail(ErrorCode::kParameter, "reference label " + std::to_string(label) + " outside [0, " +
                                      std::to_string(m_) + ")");
    }
    if (bek.values.size() != len) fail(ErrorCode::kShape, "reference vectors differ in length");
    if (!(bek.source == source_)) fail(ErrorCode::kConfig, "reference vectors mix BEK sources");
    for (double v : bek.values) {
      if (!std::isfinite(v)) fail(ErrorCode::kNumeric, "non-finite reference vector");
    }
    ++per_class[static_cast<std::size_t>(label)];
  }
  for (int c = 0; c < m_; ++c) {
    if (per_class[static_cast<std::size_t>(c)] == 0) {
      fail(ErrorCode::kCoverage, "hijack class " + std::to_string(c) + " has no reference entry");
    }
  }
}

HijackVerdict classify(const ReferenceDb& db, const BekVector& query, Metric metric,
                       DistanceDiagnostics* diag) {
  if (!(query.source == db.source())) {
    fail(ErrorCode::kConfig, "query source " + query.source.to_string() +
                                 " does not match database source " + db.source().to_string());
  }
  if (query.values.size() != db.dim()) {
    fail(ErrorCode::kShape, "query length does not match reference vectors");
  }
  const auto m = static_cast<std::size_t>(db.m());
  std::vector<double> best(m, std::numeric_limits<double>::infinity());
  for (const auto& [bek, label] : db.entries()) {
    const double d = distance(bek.values, query.values, metric, diag);
    auto& slot = best[static_cast<std::size_t>(label)];
    slot = std::min(slot, d);
  }
  std::vector<int> order(m);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return best[static_cast<std::size_t>(a)] < best[static_cast<std::size_t>(b)];
  });
  HijackVerdict verdict;
  verdict.ranked_labels = order;
  verdict.distances.reserve(m);
  for (int c : order) verdict.distances.push_back(best[static_cast<std::size_t>(c)]);
  return verdict;
}

namespace {

void check_n(int n, int m) {
  if (n < 1 || n > m) {
    fail(ErrorCode::kParameter, "N = " + std::to_string(n) + " outside [1, " + std::to_string(m) + "]");
  }
}

bool in_top(const HijackVerdict& v, int label, int n) {
  const auto end = v.ranked_labels.begin() + n;
  return std::find(v.ranked_labels.begin(), end, label) != end;
}

}  // namespace

double top_n_accuracy(const ReferenceDb& db, std::span<const LabeledBek> queries, Metric metric,
                      int n) {
  check_n(n, db.m());
  if (queries.empty()) fail(ErrorCode::kParameter, "no queries");
  std::size_t hits = 0;
  for (const auto& q : queries) {
    if (in_top(classify(db, q.bek, metric), q.label, n)) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(queries.size());
}

double hijack_lower_bound(int m) {
  if (m < 1) fail(ErrorCode::kParameter, "lower bound needs m >= 1");
  return 1.0 / static_cast<double>(m);
}

std::vector<BekVector> extract_all(const Network& net, std::span<const Sample> samples,
                                   BekSource source) {
  std::vector<BekVector> out;
  out.reserve(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    out.push_back(extract_bek(net, samples[i].features, source, i));
  }
  return out;
}

AttackReport run_attack(const Network& net, BekSource source, std::span<const Sample> references,
                        std::span<const Sample> queries, Metric metric, int n_max,
                        std::uint64_t seed) {
  if (references.empty()) fail(ErrorCode::kCoverage, "no reference samples");
  if (queries.empty()) fail(ErrorCode::kParameter, "no query samples");
  int m = 0;
  for (const auto& s : references) {
    if (!s.hijack_label) fail(ErrorCode::kConfig, "reference sample without hijack label");
    m = std::max(m, *s.hijack_label + 1);
  }
  for (const auto& s : queries) {
    if (!s.hijack_label) fail(ErrorCode::kConfig, "query sample without hijack label");
    if (*s.hijack_label >= m) {
      fail(ErrorCode::kCoverage, "query class " + std::to_string(*s.hijack_label) +
                                     " has no reference entry");
    }
  }
  check_n(n_max, m);

  std::vector<std::pair<BekVector, int>> entries;
  entries.reserve(references.size());
  auto ref_bek = extract_all(net, references, source);
  for (std::size_t i = 0; i < references.size(); ++i) {
    entries.emplace_back(std::move(ref_bek[i]), *references[i].hijack_label);
  }
  const ReferenceDb db(std::move(entries), m);

  AttackReport report;
  report.metric = metric;
  report.source = source;
  report.m = m;
  report.num_queries = queries.size();
  report.seed = seed;
  report.lower_bound = hijack_lower_bound(m);

  DistanceDiagnostics diag;
  std::vector<std::size_t> hits(static_cast<std::size_t>(n_max), 0);
  for (std::size_t i = 0; i < queries.size(); ++i) {
    const auto bek = extract_bek(net, queries[i].features, source, i);
    auto verdict = classify(db, bek, metric, &diag);
    const int label = *queries[i].hijack_label;
    const auto pos = static_cast<std::size_t>(
        std::find(verdict.ranked_labels.begin(), verdict.ranked_labels.end(), label) -
        verdict.ranked_labels.begin());
    for (std::size_t n = pos; n < hits.size(); ++n) ++hits[n];
    report.verdicts.push_back(std::move(verdict));
    report.query_labels.push_back(label);
  }
  for (auto h : hits) {
    report.top_n.push_back(static_cast<double>(h) / static_cast<double>(queries.size()));
  }
  report.zero_vector_cosines = diag.zero_vector_cosines;
  return report;
}

BekVector truncate_logits(const BekVector& bek, int k) {
  const auto len = static_cast<int>(bek.values.size());
  if (k < 1 || k > len) {
    fail(ErrorCode::kParameter, "truncation k = " + std::to_string(k) + " outside [1, " +
                                    std::to_string(len) + "]");
  }
  BekVector out = bek;
  if (k == len) return out;
  std::vector<std::size_t> order(bek.values.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return bek.values[a] > bek.values[b];
  });
  const double floor_value = *std::min_element(bek.values.begin(), bek.values.end());
  for (std::size_t i = static_cast<std::size_t>(k); i < order.size(); ++i) {
    out.values[order[i]] = floor_value;
  }
  return out;
}

double surrogate_hijack_accuracy(const Network& net, BekSource source,
                                 std::span<const Sample> train, std::span<const Sample> test,
                                 const TrainConfig& cfg) {
  if (train.empty() || test.empty()) fail(ErrorCode::kParameter, "surrogate needs train and test samples");
  std::vector<std::vector<double>> vectors;
  std::vector<int> labels;
  for (const auto& s : train) {
    if (!s.hijack_label) fail(ErrorCode::kConfig, "surrogate training sample without hijack label");
    vectors.push_back(extract_bek(net, s.features, source).values);
    labels.push_back(*s.hijack_label);
  }
  const auto surrogate = train_surrogate(vectors, labels, cfg);
  std::size_t hits = 0;
  for (const auto& s : test) {
    if (!s.hijack_label) fail(ErrorCode::kConfig, "surrogate test sample without hijack label");
    const auto logits = predict_logits(surrogate, extract_bek(net, s.features, source).values);
    if (static_cast<int>(argmax(logits)) == *s.hijack_label) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(test.size());
}

}  // namespace snatchml
