#include "snatchml/compression.hpp"

#include <array>
#include <cmath>
#include <limits>

#include "snatchml/error.hpp"
#include "snatchml/hijack.hpp"

namespace snatchml {

std::vector<double> default_compression_grid() {
  constexpr int kSteps = 14;
  constexpr double kLo = 0.10;
  constexpr double kHi = 0.75;
  std::vector<double> grid;
  for (int i = 0; i < kSteps; ++i) grid.push_back(kLo + (kHi - kLo) * i / (kSteps - 1));
  return grid;
}

namespace {

struct HijackPair {
  double logits = 0.0;
  double fv = 0.0;
};

HijackPair hijack_both(const Network& net, const LabeledDataset& attack_ds,
                       const AttackSettings& attack) {
  const auto refs = build_reference_db_from(attack_ds, attack.samples_per_class, attack.seed);
  AttackSettings fv_settings = attack;
  fv_settings.source.reset();
  const auto fv = run_attack(net, resolve_source(net, fv_settings), refs.references, refs.queries,
                             attack.metric, 1, attack.seed);
  const auto logits = run_attack(net, BekSource::logits(), refs.references, refs.queries,
                                 attack.metric, 1, attack.seed);
  return {logits.top_n.front(), fv.top_n.front()};
}

}  // namespace

std::vector<Candidate> enumerate_candidates(const NetworkSpec& base_spec,
                                            const std::vector<double>& expansions,
                                            const LabeledDataset& train_ds,
                                            const LabeledDataset& val_ds, const SweepConfig& cfg,
                                            const LabeledDataset* attack_ds) {
  if (expansions.empty()) fail(ErrorCode::kConfig, "empty compression grid");
  std::vector<Candidate> out;
  for (double e : expansions) {
    if (!(e > 0.0) || !std::isfinite(e)) fail(ErrorCode::kConfig, "expansions must be positive");
    Candidate c;
    c.expansion = e;
    auto spec = base_spec;
    spec.layer_widths.front() = static_cast<int>(train_ds.feature_dim());
    spec.layer_widths.back() = train_ds.n_classes_original();
    spec.width_expansion = e;
    c.params = param_count(realized_widths(spec));
    try {
      auto net = train(build(spec), train_ds, cfg.train).first;
      const auto val = original_examples(val_ds);
      c.loss = mean_loss(net, val);
      c.original_acc = accuracy(net, val);
      if (!std::isfinite(c.loss)) fail(ErrorCode::kNumeric, "non-finite validation loss");
      if (attack_ds) {
        const auto h = hijack_both(net, *attack_ds, cfg.attack);
        c.hijack_top1_logits = h.logits;
        c.hijack_top1_fv = h.fv;
      }
      c.net = std::move(net);
    } catch (const Error& err) {
      if (err.code() != ErrorCode::kTraining && err.code() != ErrorCode::kNumeric) throw;
      c.valid = false;
      c.failure = err.what();
    }
    out.push_back(std::move(c));
  }
  return out;
}

TopsisResult topsis_rank(std::span<const double> losses, std::span<const double> params,
                         const std::vector<bool>& valid, const TopsisConfig& cfg) {
  if (losses.size() != params.size() || losses.size() != valid.size()) {
    fail(ErrorCode::kShape, "TOPSIS columns differ in length");
  }
  if (!(cfg.w_loss > 0.0) || !(cfg.w_params > 0.0)) {
    fail(ErrorCode::kConfig, "TOPSIS weights must be positive");
  }
  const double wsum = cfg.w_loss + cfg.w_params;
  const double w[2] = {cfg.w_loss / wsum, cfg.w_params / wsum};
  const std::span<const double> cols[2] = {losses, params};

  TopsisResult result;
  result.closeness.assign(losses.size(), std::numeric_limits<double>::quiet_NaN());
  std::size_t n_valid = 0;
  for (bool v : valid) n_valid += v ? 1 : 0;
  if (n_valid == 0) fail(ErrorCode::kSelection, "no valid candidates to select from");

  // Weighted, vector-normalized matrix restricted to valid rows.
  std::vector<std::array<double, 2>> v(losses.size());
  std::array<double, 2> ideal{std::numeric_limits<double>::infinity(),
                              std::numeric_limits<double>::infinity()};
  std::array<double, 2> anti{-std::numeric_limits<double>::infinity(),
                             -std::numeric_limits<double>::infinity()};
  for (int c = 0; c < 2; ++c) {
    double norm = 0.0;
    for (std::size_t i = 0; i < losses.size(); ++i) {
      if (valid[i]) norm += cols[c][i] * cols[c][i];
    }
    norm = std::sqrt(norm);
    for (std::size_t i = 0; i < losses.size(); ++i) {
      if (!valid[i]) continue;
      v[i][c] = norm > 0.0 ? w[c] * cols[c][i] / norm : 0.0;
      ideal[c] = std::min(ideal[c], v[i][c]);
      anti[c] = std::max(anti[c], v[i][c]);
    }
  }

  bool have_best = false;
  for (std::size_t i = 0; i < losses.size(); ++i) {
    if (!valid[i]) continue;
    const double d_plus = std::hypot(v[i][0] - ideal[0], v[i][1] - ideal[1]);
    const double d_minus = std::hypot(v[i][0] - anti[0], v[i][1] - anti[1]);
    const double total = d_plus + d_minus;
    const double closeness = total > 0.0 ? d_minus / total : 1.0;
    result.closeness[i] = closeness;
    if (!have_best) {
      result.index = i;
      have_best = true;
      continue;
    }
    const double best = result.closeness[result.index];
    if (closeness > best || (closeness == best && params[i] < params[result.index])) {
      result.index = i;
    }
  }
  return result;
}

TopsisResult topsis_select(std::span<const Candidate> candidates, const TopsisConfig& cfg) {
  if (candidates.empty()) fail(ErrorCode::kSelection, "no candidates to select from");
  std::vector<double> losses;
  std::vector<double> params;
  std::vector<bool> valid;
  for (const auto& c : candidates) {
    losses.push_back(c.valid ? c.loss : 0.0);
    params.push_back(static_cast<double>(c.params));
    valid.push_back(c.valid);
  }
  return topsis_rank(losses, params, valid, cfg);
}

std::size_t scalarized_select(std::span<const Candidate> candidates, double alpha, double beta) {
  if (!std::isfinite(alpha) || !std::isfinite(beta) || alpha < 0.0 || beta < 0.0) {
    fail(ErrorCode::kConfig, "scalarized selection needs explicit finite alpha, beta >= 0");
  }
  std::optional<std::size_t> best;
  double best_score = 0.0;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const auto& c = candidates[i];
    if (!c.valid) continue;
    const double score = alpha * c.loss + beta * static_cast<double>(c.params);
    if (!best || score < best_score) {
      best = i;
      best_score = score;
    }
  }
  if (!best) fail(ErrorCode::kSelection, "no valid candidates to select from");
  return *best;
}

CompressionRow compression_report(const Network& base, const Network& compressed,
                                  double expansion, const LabeledDataset& eval_ds,
                                  const LabeledDataset& attack_ds, const AttackSettings& attack) {
  CompressionRow row;
  row.expansion = expansion;
  row.params_base = param_count(base);
  row.params_cmp = param_count(compressed);
  row.original_acc_base = original_accuracy(base, eval_ds);
  row.original_acc_cmp = original_accuracy(compressed, eval_ds);
  const auto hb = hijack_both(base, attack_ds, attack);
  const auto hc = hijack_both(compressed, attack_ds, attack);
  row.hijack_logits_base = hb.logits;
  row.hijack_fv_base = hb.fv;
  row.hijack_logits_cmp = hc.logits;
  row.hijack_fv_cmp = hc.fv;
  return row;
}

}  // namespace snatchml
