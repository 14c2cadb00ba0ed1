#include "snatchml/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "snatchml/error.hpp"
#include "snatchml/rng.hpp"

namespace snatchml {

double median(std::vector<double> values) {
  if (values.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(values.begin(), values.end());
  const std::size_t mid = values.size() / 2;
  return values.size() % 2 ? values[mid] : 0.5 * (values[mid - 1] + values[mid]);
}

double pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) fail(ErrorCode::kShape, "pearson inputs differ in length");
  if (x.size() < 2) fail(ErrorCode::kParameter, "pearson needs at least 2 observations");
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0;
  double sxx = 0.0;
  double syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx;
    const double dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) return std::numeric_limits<double>::quiet_NaN();
  const double r = sxy / (std::sqrt(sxx) * std::sqrt(syy));
  return std::clamp(r, -1.0, 1.0);
}

namespace {

std::vector<double> average_ranks(std::span<const double> v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    const double rank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = rank;
    i = j + 1;
  }
  return ranks;
}

}  // namespace

double spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) fail(ErrorCode::kShape, "spearman inputs differ in length");
  const auto rx = average_ranks(x);
  const auto ry = average_ranks(y);
  return pearson(rx, ry);
}

const char* to_string(CorrelationPairing pairing) {
  return pairing == CorrelationPairing::kByIndex ? "by_index" : "all_pairs";
}

CorrelationReport correlation_distribution(const Network& a, const Network& b, int layer,
                                           const LabeledDataset& probe,
                                           CorrelationPairing pairing) {
  if (layer != kLogits && (layer < 0 || static_cast<std::size_t>(layer) >= a.layer_count())) {
    fail(ErrorCode::kIndex, "correlation layer " + std::to_string(layer) + " out of range");
  }
  // Only the layers feeding the compared activations have to agree; nets for
  // different tasks may differ past the tap (e.g. in output width).
  const auto& wa = a.widths();
  const auto& wb = b.widths();
  const std::size_t upto = layer == kLogits ? wa.size() : static_cast<std::size_t>(layer) + 2;
  if (wa.size() < upto || wb.size() < upto ||
      !std::equal(wa.begin(), wa.begin() + static_cast<std::ptrdiff_t>(upto), wb.begin()) ||
      (layer == kLogits && wa != wb)) {
    fail(ErrorCode::kConfig, "correlation needs networks with the same realized architecture "
                             "up to the compared layer");
  }
  if (probe.size() < 2) fail(ErrorCode::kParameter, "probe set needs at least 2 samples");

  // series[unit][sample]
  auto collect = [&](const Network& net) {
    std::vector<std::vector<double>> series;
    for (std::size_t i = 0; i < probe.size(); ++i) {
      const auto act = tap(forward(net, probe[i].features), layer);
      if (series.empty()) series.assign(act.size(), std::vector<double>(probe.size()));
      for (std::size_t u = 0; u < act.size(); ++u) series[u][i] = act[u];
    }
    return series;
  };
  const auto sa = collect(a);
  const auto sb = collect(b);

  CorrelationReport report;
  report.layer = layer;
  report.pairing = pairing;
  auto add = [&](const std::vector<double>& x, const std::vector<double>& y) {
    const double r = pearson(x, y);
    if (std::isnan(r)) {
      ++report.excluded_pairs;
    } else {
      report.values.push_back(r);
    }
  };
  if (pairing == CorrelationPairing::kByIndex) {
    for (std::size_t u = 0; u < sa.size(); ++u) add(sa[u], sb[u]);
  } else {
    for (const auto& x : sa) for (const auto& y : sb) add(x, y);
  }
  if (!report.values.empty()) {
    const double n = static_cast<double>(report.values.size());
    report.mean = std::accumulate(report.values.begin(), report.values.end(), 0.0) / n;
    report.median = median(report.values);
    report.fraction_positive =
        static_cast<double>(std::count_if(report.values.begin(), report.values.end(),
                                          [](double r) { return r > 0.0; })) / n;
  } else {
    report.mean = report.median = std::numeric_limits<double>::quiet_NaN();
  }
  return report;
}

BekSource resolve_source(const Network& net, const AttackSettings& attack) {
  if (attack.source) return *attack.source;
  const int k = net.last_hidden();
  return k == kLogits ? BekSource::logits() : BekSource::layer(k);
}

namespace {

std::vector<int> sample_classes(int available, int count, std::uint64_t seed, const char* what) {
  if (count < 2 || count > available) {
    fail(ErrorCode::kConfig, std::string(what) + " subset of " + std::to_string(count) +
                                 " classes, but " + std::to_string(available) + " available");
  }
  std::vector<int> all(static_cast<std::size_t>(available));
  std::iota(all.begin(), all.end(), 0);
  Rng rng(seed);
  rng.shuffle(all);
  all.resize(static_cast<std::size_t>(count));
  std::sort(all.begin(), all.end());
  return all;
}

NetworkSpec fit_spec(NetworkSpec spec, std::size_t input_dim, int n_out) {
  if (spec.layer_widths.size() < 2) fail(ErrorCode::kConfig, "network spec needs at least 2 widths");
  spec.layer_widths.front() = static_cast<int>(input_dim);
  spec.layer_widths.back() = n_out;
  return spec;
}

std::vector<int> original_subset(const LabeledDataset& ds, int n, const SweepConfig& cfg) {
  return sample_classes(ds.n_classes_original(), n, derive_seed(cfg.seed, 0x100 + n), "original");
}

std::vector<int> hijack_subset(const LabeledDataset& ds, int m, const SweepConfig& cfg) {
  return sample_classes(ds.n_classes_hijack(), m, derive_seed(cfg.seed, 0x200 + m), "hijack");
}

Network train_for_classes(const NetworkSpec& base_spec, const LabeledDataset& train_ds,
                          const std::vector<int>& classes, const SweepConfig& cfg) {
  const auto sub = restrict_classes(train_ds, classes, {});
  const auto spec = fit_spec(base_spec, sub.feature_dim(), sub.n_classes_original());
  return train(build(spec), sub, cfg.train).first;
}

SweepPoint ratio_point(const Network& net, const LabeledDataset& attack_ds,
                       const std::vector<int>& orig, int n, int m, const SweepConfig& cfg) {
  // The hijack pool keeps every original class: the victim's label set does
  // not constrain what the adversary queries with.
  std::vector<int> all_orig(static_cast<std::size_t>(attack_ds.n_classes_original()));
  std::iota(all_orig.begin(), all_orig.end(), 0);
  const auto attack_sub = restrict_classes(attack_ds, all_orig, hijack_subset(attack_ds, m, cfg));
  const auto refs = build_reference_db_from(attack_sub, cfg.attack.samples_per_class, cfg.attack.seed);
  const auto report = run_attack(net, resolve_source(net, cfg.attack), refs.references,
                                 refs.queries, cfg.attack.metric, 1, cfg.attack.seed);
  SweepPoint p;
  p.x = static_cast<double>(m) / static_cast<double>(n);
  p.metrics["n"] = n;
  p.metrics["m"] = m;
  p.metrics["r"] = p.x;
  p.metrics["top1"] = report.top_n.front();
  p.metrics["lower_bound"] = report.lower_bound;
  p.metrics["original_acc"] = original_accuracy(net, restrict_classes(attack_ds, orig, {}));
  return p;
}

}  // namespace

SweepPoint complexity_ratio_point(const NetworkSpec& base_spec, const LabeledDataset& train_ds,
                                  const LabeledDataset& attack_ds, int n, int m,
                                  const SweepConfig& cfg) {
  const auto orig = original_subset(train_ds, n, cfg);
  const auto net = train_for_classes(base_spec, train_ds, orig, cfg);
  return ratio_point(net, attack_ds, orig, n, m, cfg);
}

SweepCurve complexity_ratio_sweep(const NetworkSpec& base_spec, const LabeledDataset& train_ds,
                                  const LabeledDataset& attack_ds, const std::vector<int>& n_values,
                                  const std::vector<int>& m_values, const SweepConfig& cfg) {
  if (n_values.empty() || m_values.empty()) fail(ErrorCode::kConfig, "empty ratio grid");
  if (!attack_ds.has_hijack_labels()) fail(ErrorCode::kConfig, "attack dataset needs hijack labels");
  SweepCurve curve;
  curve.axis = "complexity_ratio";
  curve.seeds = {cfg.seed, cfg.train.seed, base_spec.seed, cfg.attack.seed};
  for (int n : n_values) {
    // One training per n; every m reuses it (the per-point path retrains identically).
    const auto orig = original_subset(train_ds, n, cfg);
    const auto net = train_for_classes(base_spec, train_ds, orig, cfg);
    for (int m : m_values) curve.points.push_back(ratio_point(net, attack_ds, orig, n, m, cfg));
  }
  std::stable_sort(curve.points.begin(), curve.points.end(), [](const auto& a, const auto& b) {
    if (a.x != b.x) return a.x < b.x;
    return a.metrics.at("n") < b.metrics.at("n");
  });
  return curve;
}

std::vector<double> default_width_expansions() {
  return {0.25, 0.5, 0.75, 1.0, 1.25, 1.5, 2.0, 2.5};
}

SweepPoint overparam_point(const NetworkSpec& base_spec, double expansion,
                           const LabeledDataset& train_ds, const LabeledDataset& attack_ds,
                           const SweepConfig& cfg) {
  if (!(expansion > 0.0)) fail(ErrorCode::kConfig, "width expansions must be positive");
  auto spec = fit_spec(base_spec, train_ds.feature_dim(), train_ds.n_classes_original());
  spec.width_expansion = expansion;
  const auto net = train(build(spec), train_ds, cfg.train).first;
  const auto refs = build_reference_db_from(attack_ds, cfg.attack.samples_per_class, cfg.attack.seed);
  const auto fv = run_attack(net, resolve_source(net, cfg.attack), refs.references, refs.queries,
                             cfg.attack.metric, 1, cfg.attack.seed);
  const auto logits = run_attack(net, BekSource::logits(), refs.references, refs.queries,
                                 cfg.attack.metric, 1, cfg.attack.seed);
  SweepPoint p;
  p.x = expansion;
  p.metrics["original_acc"] = original_accuracy(net, attack_ds);
  p.metrics["top1"] = fv.top_n.front();
  p.metrics["top1_logits"] = logits.top_n.front();
  p.metrics["params"] = static_cast<double>(param_count(net));
  p.metrics["params_closed_form"] = static_cast<double>(param_count(realized_widths(spec)));
  p.metrics["lower_bound"] = fv.lower_bound;
  return p;
}

SweepCurve overparam_sweep(const NetworkSpec& base_spec, const std::vector<double>& expansions,
                           const LabeledDataset& train_ds, const LabeledDataset& attack_ds,
                           const SweepConfig& cfg) {
  if (expansions.empty()) fail(ErrorCode::kConfig, "no width expansions");
  auto sorted = expansions;
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
    fail(ErrorCode::kConfig, "duplicate width expansion");
  }
  SweepCurve curve;
  curve.axis = "width_expansion";
  curve.seeds = {cfg.train.seed, base_spec.seed, cfg.attack.seed};
  for (double e : sorted) curve.points.push_back(overparam_point(base_spec, e, train_ds, attack_ds, cfg));
  return curve;
}

SweepCurve logit_truncation_curve(const Network& net, std::span<const Sample> references,
                                  std::span<const Sample> queries, Metric metric,
                                  const std::vector<int>& ks) {
  std::vector<std::pair<BekVector, int>> entries;
  int m = 0;
  for (const auto& s : references) {
    if (!s.hijack_label) fail(ErrorCode::kConfig, "reference sample without hijack label");
    m = std::max(m, *s.hijack_label + 1);
  }
  const auto ref_bek = extract_all(net, references, BekSource::logits());
  const auto query_bek = extract_all(net, queries, BekSource::logits());
  auto sorted = ks;
  std::sort(sorted.begin(), sorted.end());
  sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());

  SweepCurve curve;
  curve.axis = "top_k_logits";
  for (int k : sorted) {
    entries.clear();
    for (std::size_t i = 0; i < references.size(); ++i) {
      entries.emplace_back(truncate_logits(ref_bek[i], k), *references[i].hijack_label);
    }
    const ReferenceDb db(entries, m);
    std::vector<LabeledBek> labeled;
    for (std::size_t i = 0; i < queries.size(); ++i) {
      if (!queries[i].hijack_label) fail(ErrorCode::kConfig, "query sample without hijack label");
      labeled.push_back({truncate_logits(query_bek[i], k), *queries[i].hijack_label});
    }
    SweepPoint p;
    p.x = k;
    p.metrics["top1"] = top_n_accuracy(db, labeled, metric, 1);
    p.metrics["lower_bound"] = hijack_lower_bound(m);
    curve.points.push_back(std::move(p));
  }
  return curve;
}

namespace {

using Matrix = std::vector<std::vector<double>>;

Matrix gaussian_matrix(int rows, int cols, double stdev, Rng& rng) {
  Matrix m(static_cast<std::size_t>(rows), std::vector<double>(static_cast<std::size_t>(cols)));
  for (auto& row : m) for (auto& v : row) v = stdev * rng.normal();
  return m;
}

Matrix orthogonal_matrix(int dim, Rng& rng) {
  Matrix q;
  while (static_cast<int>(q.size()) < dim) {
    std::vector<double> v(static_cast<std::size_t>(dim));
    for (auto& x : v) x = rng.normal();
    for (const auto& b : q) {
      double dot = 0.0;
      for (int i = 0; i < dim; ++i) dot += v[i] * b[i];
      for (int i = 0; i < dim; ++i) v[i] -= dot * b[i];
    }
    double norm = 0.0;
    for (double x : v) norm += x * x;
    norm = std::sqrt(norm);
    if (norm < 1e-8) continue;
    for (auto& x : v) x /= norm;
    q.push_back(std::move(v));
  }
  return q;
}

std::vector<double> apply(const Matrix& m, const std::vector<double>& x, bool relu) {
  std::vector<double> out(m.size());
  for (std::size_t r = 0; r < m.size(); ++r) {
    double acc = 0.0;
    for (std::size_t c = 0; c < x.size(); ++c) acc += m[r][c] * x[c];
    out[r] = relu ? std::max(0.0, acc) : acc;
  }
  return out;
}

double norm_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

}  // namespace

ProjectionStats random_projection_check(int dims_in, int dims_out, int n_points, int n_trials,
                                        std::uint64_t seed, ProjectionKind kind) {
  if (dims_in < 2 || dims_out < 2 || n_points < 2 || n_trials < 1) {
    fail(ErrorCode::kParameter, "random projection check needs dims, points >= 2 and trials >= 1");
  }
  if (kind == ProjectionKind::kOrthogonal && dims_in != dims_out) {
    fail(ErrorCode::kParameter, "orthogonal projection needs dims_out == dims_in");
  }
  ProjectionStats stats;
  std::vector<double> relu_ratios;
  for (int t = 0; t < n_trials; ++t) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(t)));
    const Matrix points = gaussian_matrix(n_points, dims_in, 1.0, rng);
    const Matrix map = kind == ProjectionKind::kOrthogonal
                           ? orthogonal_matrix(dims_in, rng)
                           : gaussian_matrix(dims_out, dims_in, 1.0 / std::sqrt(dims_out), rng);
    const Matrix relu_layer = gaussian_matrix(dims_out, dims_in, std::sqrt(2.0 / dims_out), rng);
    std::vector<std::vector<double>> projected;
    std::vector<std::vector<double>> activated;
    for (const auto& p : points) {
      projected.push_back(apply(map, p, false));
      activated.push_back(apply(relu_layer, p, true));
    }
    double worst = 0.0;
    for (int i = 0; i < n_points; ++i) {
      for (int j = i + 1; j < n_points; ++j) {
        const double base = norm_diff(points[i], points[j]);
        if (base == 0.0) continue;
        worst = std::max(worst, std::abs(norm_diff(projected[i], projected[j]) / base - 1.0));
        relu_ratios.push_back(norm_diff(activated[i], activated[j]) / base);
      }
    }
    stats.max_distortions.push_back(worst);
  }
  stats.median_max_distortion = median(stats.max_distortions);
  stats.mean_max_distortion =
      std::accumulate(stats.max_distortions.begin(), stats.max_distortions.end(), 0.0) /
      static_cast<double>(stats.max_distortions.size());
  if (!relu_ratios.empty()) {
    stats.relu_ratio_mean = std::accumulate(relu_ratios.begin(), relu_ratios.end(), 0.0) /
                            static_cast<double>(relu_ratios.size());
    stats.relu_ratio_median = median(relu_ratios);
    stats.relu_ratio_min = *std::min_element(relu_ratios.begin(), relu_ratios.end());
    stats.relu_ratio_max = *std::max_element(relu_ratios.begin(), relu_ratios.end());
  }
  return stats;
}

void export_features(const Network& net, const LabeledDataset& ds, int layer,
                     const std::filesystem::path& path) {
  if (layer != kLogits && (layer < 0 || static_cast<std::size_t>(layer) >= net.layer_count())) {
    fail(ErrorCode::kIndex, "export layer " + std::to_string(layer) + " out of range");
  }
  std::vector<Sample> rows;
  rows.reserve(ds.size());
  for (const auto& s : ds.samples()) {
    Sample t;
    t.features = tap(forward(net, s.features), layer);
    t.original_label = s.original_label;
    t.hijack_label = s.hijack_label;
    rows.push_back(std::move(t));
  }
  const LabeledDataset features(ds.name() + "/features", std::move(rows), ds.n_classes_original(),
                                ds.n_classes_hijack());
  write_csv(features, path);
}

}  // namespace snatchml
