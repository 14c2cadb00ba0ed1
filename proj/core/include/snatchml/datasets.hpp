#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace snatchml {

struct Sample {
  std::vector<double> features;
  int original_label = 0;
  std::optional<int> hijack_label;

  bool operator==(const Sample&) const = default;
};

// Immutable collection of dual-labeled samples. The constructor enforces
// the dataset invariants: nonempty, uniform feature length, labels within
// the declared class counts, hijack labels present for all or none.
class LabeledDataset {
 public:
  LabeledDataset(std::string name, std::vector<Sample> samples,
                 int n_classes_original, int n_classes_hijack);

  const std::string& name() const { return name_; }
  const std::vector<Sample>& samples() const { return samples_; }
  std::size_t size() const { return samples_.size(); }
  const Sample& operator[](std::size_t i) const { return samples_[i]; }
  int n_classes_original() const { return n_classes_original_; }
  int n_classes_hijack() const { return n_classes_hijack_; }
  std::size_t feature_dim() const { return feature_dim_; }
  bool has_hijack_labels() const { return samples_.front().hijack_label.has_value(); }

  std::vector<int> original_labels() const;
  std::vector<int> hijack_labels() const;

  bool operator==(const LabeledDataset&) const = default;

 private:
  std::string name_;
  std::vector<Sample> samples_;
  int n_classes_original_;
  int n_classes_hijack_;
  std::size_t feature_dim_;
};

enum class Stratify { kOriginal, kHijack, kNone };

struct SplitSpec {
  double train_fraction = 0.7;
  std::uint64_t seed = 0;
  Stratify stratify_by = Stratify::kOriginal;
};

// How class directions of the synthetic generator are drawn.
//   kRandom:     independent random unit vectors (tasks statistically related)
//   kOrthogonal: one orthonormal frame for all n+m directions (unrelated tasks)
enum class DirectionMode { kRandom, kOrthogonal };

struct DualBlobParams {
  int n_orig = 4;
  int m_hijack = 8;
  int dim = 16;
  int n_per_cell = 10;
  double orig_sep = 4.0;
  double hijack_sep = 4.0;
  double noise_sigma = 0.5;
  std::uint64_t seed = 0;
  DirectionMode directions = DirectionMode::kRandom;
};

// Gaussian clusters, one per (original, hijack) label pair. The cell mean is
// orig_sep * u[original] + hijack_sep * v[hijack] for unit directions u, v.
LabeledDataset generate_dual_blobs(const DualBlobParams& params);

LabeledDataset generate_dual_blobs(int n_orig, int m_hijack, int dim, int n_per_cell,
                                   double orig_sep, double hijack_sep,
                                   double noise_sigma, std::uint64_t seed);

struct CsvOptions {
  // Explicit class counts for sparse files; otherwise max label + 1.
  std::optional<int> n_classes_original;
  std::optional<int> n_classes_hijack;
};

LabeledDataset load_csv(const std::filesystem::path& path, bool has_hijack_column,
                        const CsvOptions& options = {});

// Writes the CSV schema read by load_csv. Values use 17 significant digits.
void write_csv(const LabeledDataset& ds, const std::filesystem::path& path);

LabeledDataset load_idx_images(const std::filesystem::path& images_path,
                               const std::filesystem::path& labels_path);

// Deterministic train/test partition. Per stratum of c samples the test side
// receives floor((1 - train_fraction) * c) samples, clamped to [1, c - 1] when
// c >= 2; the remainder goes to train. Both halves keep input order.
std::pair<LabeledDataset, LabeledDataset> split(const LabeledDataset& ds,
                                                const SplitSpec& spec);

// The attacker's reference set and the disjoint queries left over.
struct ReferenceSplit {
  std::vector<Sample> references;  // class-major: class 0 entries first
  std::vector<Sample> queries;     // remaining samples in dataset order
};

// Picks samples_per_class samples of every hijack class as references and
// withholds them from the query list.
ReferenceSplit build_reference_db_from(const LabeledDataset& ds, int samples_per_class,
                                       std::uint64_t seed);

// Keeps samples whose labels are in the given subsets and relabels each
// subset to 0..k-1 in the listed order. An empty hijack list keeps all.
LabeledDataset restrict_classes(const LabeledDataset& ds,
                                const std::vector<int>& original_classes,
                                const std::vector<int>& hijack_classes);

}  // namespace snatchml
