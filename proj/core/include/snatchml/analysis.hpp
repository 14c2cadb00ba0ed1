#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "snatchml/datasets.hpp"
#include "snatchml/hijack.hpp"
#include "snatchml/network.hpp"
#include "snatchml/training.hpp"

namespace snatchml {

// Pearson correlation. Returns NaN when either input is constant.
double pearson(std::span<const double> x, std::span<const double> y);

// Spearman rank correlation with average ranks for ties.
double spearman(std::span<const double> x, std::span<const double> y);

// kByIndex:  unit j of net A against unit j of net B.
// kAllPairs: every unit of A against every unit of B.
enum class CorrelationPairing { kByIndex, kAllPairs };

const char* to_string(CorrelationPairing pairing);

struct CorrelationReport {
  int layer = 0;
  CorrelationPairing pairing = CorrelationPairing::kByIndex;
  std::vector<double> values;     // defined correlations only
  std::size_t excluded_pairs = 0; // pairs touching a constant (dead) unit
  double mean = 0.0;
  double median = 0.0;
  double fraction_positive = 0.0;
};

// The nets must agree in realized widths up to and including layer `layer`
// (all widths when comparing logits).
CorrelationReport correlation_distribution(const Network& a, const Network& b, int layer,
                                           const LabeledDataset& probe,
                                           CorrelationPairing pairing = CorrelationPairing::kByIndex);

struct SweepPoint {
  double x = 0.0;
  std::map<std::string, double> metrics;
};

struct SweepCurve {
  std::string axis;
  std::vector<SweepPoint> points;
  std::vector<std::uint64_t> seeds;
};

struct AttackSettings {
  // Unset means the last hidden layer of whichever network is attacked.
  std::optional<BekSource> source;
  Metric metric = Metric::kL2;
  int samples_per_class = 1;
  std::uint64_t seed = 0;
};

struct SweepConfig {
  TrainConfig train;
  AttackSettings attack;
  std::uint64_t seed = 0;  // class-subset sampling
};

BekSource resolve_source(const Network& net, const AttackSettings& attack);

// Trains on `train_ds` restricted to n original classes and attacks
// `attack_ds` restricted to m hijack classes (all original classes stay in
// the attack pool). Subsets are drawn without replacement from seeded streams.
// Points are ordered by r = m/n, then n.
SweepCurve complexity_ratio_sweep(const NetworkSpec& base_spec, const LabeledDataset& train_ds,
                                  const LabeledDataset& attack_ds, const std::vector<int>& n_values,
                                  const std::vector<int>& m_values, const SweepConfig& cfg);

// One (n, m) point of the sweep above, reproducible on its own.
SweepPoint complexity_ratio_point(const NetworkSpec& base_spec, const LabeledDataset& train_ds,
                                  const LabeledDataset& attack_ds, int n, int m,
                                  const SweepConfig& cfg);

std::vector<double> default_width_expansions();

// Per expansion: build and train a fresh network with the base seeds, attack
// it, record original accuracy (on attack_ds), hijack top-1 and param count.
SweepCurve overparam_sweep(const NetworkSpec& base_spec, const std::vector<double>& expansions,
                           const LabeledDataset& train_ds, const LabeledDataset& attack_ds,
                           const SweepConfig& cfg);

SweepPoint overparam_point(const NetworkSpec& base_spec, double expansion,
                           const LabeledDataset& train_ds, const LabeledDataset& attack_ds,
                           const SweepConfig& cfg);

// Hijack top-1 when only the k largest logits survive, for each k.
SweepCurve logit_truncation_curve(const Network& net, std::span<const Sample> references,
                                  std::span<const Sample> queries, Metric metric,
                                  const std::vector<int>& ks);

enum class ProjectionKind { kGaussian, kOrthogonal };

struct ProjectionStats {
  std::vector<double> max_distortions;  // per trial: max |ratio - 1| over pairs
  double median_max_distortion = 0.0;
  double mean_max_distortion = 0.0;
  // Distance ratios |f(x) - f(y)| / |x - y| through a random ReLU layer.
  double relu_ratio_mean = 0.0;
  double relu_ratio_median = 0.0;
  double relu_ratio_min = 0.0;
  double relu_ratio_max = 0.0;
};

// Random linear maps with N(0, 1/dims_out) entries (or a random orthogonal
// map when dims_out == dims_in) applied to standard Gaussian point sets.
ProjectionStats random_projection_check(int dims_in, int dims_out, int n_points, int n_trials,
                                        std::uint64_t seed,
                                        ProjectionKind kind = ProjectionKind::kGaussian);

// Writes tapped activations in the dataset CSV schema.
void export_features(const Network& net, const LabeledDataset& ds, int layer,
                     const std::filesystem::path& path);

double median(std::vector<double> values);

}  // namespace snatchml
