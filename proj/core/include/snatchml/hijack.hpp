#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "snatchml/datasets.hpp"
#include "snatchml/network.hpp"
#include "snatchml/training.hpp"

namespace snatchml {

// Where benign extracted knowledge is read from: the output logits
// (black-box) or one layer's activations (white-box).
class BekSource {
 public:
  static BekSource logits() { return BekSource(kLogits); }
  static BekSource layer(int k) { return BekSource(k); }

  bool is_logits() const { return layer_ == kLogits; }
  int layer_index() const { return layer_; }
  std::string to_string() const;
  // Accepts "logits" or "layer:<k>".
  static BekSource parse(const std::string& text);

  bool operator==(const BekSource&) const = default;

 private:
  explicit BekSource(int layer) : layer_(layer) {}
  int layer_;
};

struct BekVector {
  std::vector<double> values;
  BekSource source = BekSource::logits();
  std::size_t sample_id = 0;
};

enum class Metric { kL2, kCosine };

const char* to_string(Metric metric);
Metric parse_metric(const std::string& text);

BekVector extract_bek(const Network& net, std::span<const double> x, BekSource source,
                      std::size_t sample_id = 0);

// Counts cosine evaluations that hit a zero vector.
struct DistanceDiagnostics {
  std::size_t zero_vector_cosines = 0;
};

// l2: Euclidean norm of a - b. cosine: 1 - a.b / (|a| |b|); a zero vector on
// either side yields the maximal distance 2.0 and is counted in `diag`.
double distance(std::span<const double> a, std::span<const double> b, Metric metric,
                DistanceDiagnostics* diag = nullptr);

// The attacker's database: at least one BEK vector per hijack class.
class ReferenceDb {
 public:
  ReferenceDb(std::vector<std::pair<BekVector, int>> entries, int m);

  const std::vector<std::pair<BekVector, int>>& entries() const { return entries_; }
  int m() const { return m_; }
  const BekSource& source() const { return source_; }
  std::size_t dim() const { return entries_.front().first.values.size(); }

 private:
  std::vector<std::pair<BekVector, int>> entries_;
  int m_;
  BekSource source_;
};

struct HijackVerdict {
  std::vector<int> ranked_labels;  // one per class, nearest first
  std::vector<double> distances;   // class distance = min over its entries
};

// Ties at equal distance go to the lower class index.
HijackVerdict classify(const ReferenceDb& db, const BekVector& query, Metric metric,
                       DistanceDiagnostics* diag = nullptr);

struct LabeledBek {
  BekVector bek;
  int label;
};

double top_n_accuracy(const ReferenceDb& db, std::span<const LabeledBek> queries, Metric metric,
                      int n);

// Random-guess accuracy 1/m.
double hijack_lower_bound(int m);

struct AttackReport {
  std::vector<double> top_n;  // top_n[i] is the top-(i+1) accuracy
  double lower_bound = 0.0;
  Metric metric = Metric::kL2;
  BekSource source = BekSource::logits();
  int m = 0;
  std::size_t num_queries = 0;
  std::uint64_t seed = 0;
  std::size_t zero_vector_cosines = 0;
  std::vector<HijackVerdict> verdicts;  // per query, in query order
  std::vector<int> query_labels;
};

std::vector<BekVector> extract_all(const Network& net, std::span<const Sample> samples,
                                   BekSource source);

// Zero-shot hijack of a frozen network: extract BEK for references and
// queries, build the database and rank every query. `seed` is only recorded.
AttackReport run_attack(const Network& net, BekSource source, std::span<const Sample> references,
                        std::span<const Sample> queries, Metric metric, int n_max,
                        std::uint64_t seed = 0);

// Keeps the k largest logits in place and sets the rest to the vector's
// minimum. Equal values are ranked by position.
BekVector truncate_logits(const BekVector& bek, int k);

// Hijacking with stronger access: an MLP trained on BEK vectors of `train`
// and scored on `test` (both need hijack labels).
double surrogate_hijack_accuracy(const Network& net, BekSource source,
                                 std::span<const Sample> train, std::span<const Sample> test,
                                 const TrainConfig& cfg);

}  // namespace snatchml
