#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "snatchml/analysis.hpp"
#include "snatchml/datasets.hpp"
#include "snatchml/network.hpp"
#include "snatchml/training.hpp"

namespace snatchml {

struct Candidate {
  double expansion = 0.0;
  std::optional<Network> net;  // empty when training diverged
  bool valid = true;
  std::string failure;         // why the candidate is invalid
  double loss = 0.0;           // original-task validation cross-entropy
  std::size_t params = 0;
  double original_acc = 0.0;
  // Diagnostics only; never used for selection.
  double hijack_top1_logits = 0.0;
  double hijack_top1_fv = 0.0;
  double closeness = 0.0;
  bool selected = false;
};

struct TopsisConfig {
  double w_loss = 0.5;
  double w_params = 0.5;
};

struct TopsisResult {
  std::size_t index = 0;           // into the candidate list
  std::vector<double> closeness;   // per candidate; NaN for invalid ones
};

// 14 expansion ratios spaced evenly over [0.10, 0.75].
std::vector<double> default_compression_grid();

// Trains one network per expansion with the base seeds and scores it on
// `val_ds`. When `attack_ds` is given the hijack diagnostics are filled in.
std::vector<Candidate> enumerate_candidates(const NetworkSpec& base_spec,
                                            const std::vector<double>& expansions,
                                            const LabeledDataset& train_ds,
                                            const LabeledDataset& val_ds, const SweepConfig& cfg,
                                            const LabeledDataset* attack_ds = nullptr);

// TOPSIS over (loss, params), both cost criteria, vector normalization.
// Closeness is d- / (d+ + d-), defined as 1 when both distances vanish.
// Ties go to fewer params, then to the earlier candidate.
TopsisResult topsis_select(std::span<const Candidate> candidates, const TopsisConfig& cfg = {});

// Plain TOPSIS over a (loss, params) table; exposed for property tests.
TopsisResult topsis_rank(std::span<const double> losses, std::span<const double> params,
                         const std::vector<bool>& valid, const TopsisConfig& cfg = {});

// argmin alpha * loss + beta * params over valid candidates.
std::size_t scalarized_select(std::span<const Candidate> candidates, double alpha, double beta);

struct CompressionRow {
  double expansion = 1.0;
  std::size_t params_base = 0;
  std::size_t params_cmp = 0;
  double original_acc_base = 0.0;
  double original_acc_cmp = 0.0;
  double hijack_logits_base = 0.0;
  double hijack_logits_cmp = 0.0;
  double hijack_fv_base = 0.0;
  double hijack_fv_cmp = 0.0;
};

// Original accuracy on `eval_ds` and hijack top-1 on `attack_ds` under the
// logits and last-hidden sources, for the base and the compressed network.
CompressionRow compression_report(const Network& base, const Network& compressed,
                                  double expansion, const LabeledDataset& eval_ds,
                                  const LabeledDataset& attack_ds, const AttackSettings& attack);

}  // namespace snatchml
